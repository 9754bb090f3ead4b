import logging

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api.routes import orbits, scenarios, simulations, verification
from app.core.config import settings

logging.basicConfig(level=settings.LOG_LEVEL.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

# Initialize FastAPI app
app = FastAPI(
    title="OrbitMate - Forced Oscillations on Constraint Surfaces",
    description="""
    Verification toolkit for periodically forced mechanical systems.

    Features:
    - Spherical pendulum with friction in a periodic magnetic field
    - Point on a periodically rotating convex surface
    - Block hypothesis checks and sampled boundary classification
    - Periodic orbit shooting and the never-leaving solution search
    """,
    version="1.0.0",
)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include API routes
app.include_router(scenarios.router, prefix="/api/scenarios", tags=["Scenarios"])
app.include_router(verification.router, prefix="/api/verify", tags=["Verification"])
app.include_router(orbits.router, prefix="/api/orbits", tags=["Orbits"])
app.include_router(simulations.router, prefix="/api/simulate", tags=["Simulation"])


@app.get("/")
async def root():
    """API root endpoint"""
    return {
        "message": "OrbitMate API - forced oscillations on constraint surfaces",
        "version": "1.0.0",
        "systems": ["pendulum", "rotating_surface"],
        "default_scenario": settings.DEFAULT_SCENARIO,
        "endpoints": {
            "/api/scenarios": "Bundled scenario files",
            "/api/verify": "Block hypothesis checks for a scenario",
            "/api/orbits": "Periodic orbit inside the block",
            "/api/orbits/survivor": "Solution staying in the block over a horizon",
            "/api/simulate": "Trajectory with plane and energy events",
            "/api/simulate/nonconvexity": "Internal tangency witness for a frictionless pendulum",
        },
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy"}


if __name__ == "__main__":
    uvicorn.run(app, host="0.0.0.0", port=8000)
