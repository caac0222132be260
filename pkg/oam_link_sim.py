"""
Entry script for the OAM link simulator

Usage:
    python oam_link_sim.py spectrum --l0 3 --W 0.73,2.45,4.1 --ao none,ideal
    python oam_link_sim.py entanglement --subspace=-1,1 --realizations 200
    python oam_link_sim.py bell --subspace=-1,0,1
    python oam_link_sim.py validate-screens --W 4.9
    python oam_link_sim.py reproduce fig3 --scale desk --workers 4
"""

import sys

from backend.cli import main

if __name__ == "__main__":
    sys.exit(main())
