"""
duqbench - FastAPI backend
Registry lookups, seeds and background simulation studies over HTTP
"""
import os
import sys
import signal
import atexit
from contextlib import asynccontextmanager
from fastapi import FastAPI
import uvicorn

from config import VERSION, configure_logging
from routers import registry
from routers import studies


@asynccontextmanager
async def lifespan(app):
    """Lifespan context manager for startup/shutdown events"""
    configure_logging()
    yield
    # Shutdown: drop finished job records
    studies.clear_finished_jobs()


app = FastAPI(title="duqbench", version=VERSION, lifespan=lifespan)

# Include routers
app.include_router(registry.router, prefix="/api", tags=["registry"])
app.include_router(studies.router, prefix="/api/studies", tags=["studies"])


@app.get("/")
async def root():
    """Short index of the API"""
    return {
        "name": "duqbench",
        "version": VERSION,
        "endpoints": ["/health", "/api/functions", "/api/emulators", "/api/seed", "/api/evaluate", "/api/studies"],
    }


@app.get("/health")
async def health():
    """Health check endpoint"""
    return {"status": "ok", "version": VERSION}


def cleanup_and_exit(*args):
    """Clean shutdown - ensures port is released"""
    print("\nShutting down duqbench...")
    os._exit(0)


if __name__ == "__main__":
    signal.signal(signal.SIGINT, cleanup_and_exit)
    signal.signal(signal.SIGTERM, cleanup_and_exit)
    atexit.register(cleanup_and_exit)

    # When frozen (exe), disable uvicorn's fancy logging to avoid isatty errors
    if getattr(sys, 'frozen', False):
        uvicorn.run(app, host="127.0.0.1", port=8000, log_config=None)
    else:
        uvicorn.run(app, host="127.0.0.1", port=8000)
