"""FastAPI service for the DSMT simulator."""
