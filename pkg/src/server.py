import uvicorn
from fastapi import FastAPI

from src.detection_router import router as detection_router
from src.grad_config import Settings

settings = Settings.from_env()

# Create FastAPI application
app = FastAPI(
    title="GRAD Detection Service",
    description="Real-time GPS anomaly detection, classification and recovery"
)

# Register routers
app.include_router(detection_router)


@app.get("/health")
async def health():
    return {"status": "ok"}


if __name__ == "__main__":
    uvicorn.run(
        "src.server:app",
        host=settings.host,
        port=settings.port,
    )
