# Backend module for the OAM link simulator
