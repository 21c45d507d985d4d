"""
Virtual single-view video service
Main application entry point
"""
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.config import configure_logging
from app.database import init_db
from app.routers import metrics, runs, scenarios

configure_logging()

# Initialize database
init_db()

# Create FastAPI app with OpenAPI metadata
app = FastAPI(
    title="Virtual Single-View Video Service",
    version="1.0.0",
    description="""
    Turns synchronized multi-camera frame streams of a planar scene into one
    stabilized single-view video.

    ## Features

    * **Scenarios**: render synthetic camera rigs with scripted moves and occluders
    * **Runs**: align, detect rig movements, re-align and switch to the least occluded view
    * **Metrics**: ITF and AvSpeed of a single-view video, optionally against a baseline

    ## Endpoints

    * `/scenarios` - Built-in simulator scenarios
    * `/runs` - Pipeline runs and their event logs
    * `/metrics/evaluate` - Stabilization metrics
    """,
    tags_metadata=[
        {
            "name": "scenarios",
            "description": "Synthetic ground-truth scenarios. List them and render frames plus ground truth.",
        },
        {
            "name": "runs",
            "description": "Pipeline runs. Start a run over a frame directory, track its status and events.",
        },
        {
            "name": "metrics",
            "description": "Interframe PSNR (ITF) and tracked-feature speed (AvSpeed).",
        },
    ],
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(scenarios.router, prefix="/scenarios", tags=["scenarios"])
app.include_router(runs.router, prefix="/runs", tags=["runs"])
app.include_router(metrics.router, prefix="/metrics", tags=["metrics"])


@app.get("/")
async def root():
    """Root endpoint with API information"""
    return {
        "message": "Virtual Single-View Video Service API",
        "version": "1.0.0",
        "docs": "/docs",
        "redoc": "/redoc",
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy"}
