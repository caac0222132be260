# Configuration module for the OAM link simulator
