"""
Detection API Router

Runs GPS readings through a registered model bundle's streaming pipeline.
Each request is its own stream: pipeline state does not carry over between
requests.
"""
import logging
import math
from typing import Dict, List, Optional

from fastapi import APIRouter, Header, HTTPException
from pydantic import BaseModel, Field, field_validator

from src.errors import DataError
from src.model_registry import get_model_registry
from src.pipeline import StreamingPipeline
from src.security import API_KEY_NAME, validate_api_key
from src.trace_ingest import GpsReading

logger = logging.getLogger(__name__)

# Create router
router = APIRouter(prefix="/detect", tags=["Detection"])


class ReadingPayload(BaseModel):
    """One GPS reading in raw units"""
    timestamp: float
    latitude: float = Field(ge=-90.0, le=90.0)
    longitude: float = Field(ge=-180.0, le=180.0)
    speed: Optional[float] = None


class StreamRequest(BaseModel):
    """Request model for the stream endpoint"""
    readings: List[ReadingPayload] = Field(min_length=1)

    @field_validator("readings")
    @classmethod
    def _ordered(cls, readings: List[ReadingPayload]) -> List[ReadingPayload]:
        for previous, current in zip(readings, readings[1:]):
            if current.timestamp < previous.timestamp:
                raise ValueError(f"Timestamps go backwards at {current.timestamp}")
        return readings


class ChannelOutput(BaseModel):
    value: float
    action: str
    time_type: str
    bias_type: str


class StepOutput(BaseModel):
    timestamp: float
    channels: Dict[str, ChannelOutput]


class AlertOutput(BaseModel):
    step: int
    timestamp: float
    channel: str
    run_length: int


class StreamResponse(BaseModel):
    """Response model for the stream endpoint"""
    model_id: str
    steps: List[StepOutput]
    alerts: List[AlertOutput]


class ModelInfo(BaseModel):
    model_id: str
    window: int
    warmup: int
    channels: List[str]
    schema_hash: str
    bias_classifier: bool


def _require_api_key(x_api_key: Optional[str]) -> None:
    if not validate_api_key(x_api_key):
        raise HTTPException(status_code=401, detail="Invalid or missing API key")


@router.get("/models", response_model=List[ModelInfo])
async def list_models(x_api_key: Optional[str] = Header(None, alias=API_KEY_NAME)):
    """
    List the registered model bundles

    **Authentication**: Requires API key in X-API-Key header

    **Example**:
    ```bash
    curl -X GET "http://localhost:8000/detect/models" -H "X-API-Key: your_api_key"
    ```
    """
    _require_api_key(x_api_key)
    return [
        ModelInfo(
            model_id=model_id,
            window=bundle.window,
            warmup=bundle.warmup,
            channels=list(bundle.channels),
            schema_hash=bundle.detector.schema_hash,
            bias_classifier=bundle.bias_clf is not None,
        )
        for model_id, bundle in sorted(get_model_registry().get_all_models().items())
    ]


@router.post("/{model_id}/stream", response_model=StreamResponse)
def detect_stream(model_id: str, request: StreamRequest, x_api_key: Optional[str] = Header(None, alias=API_KEY_NAME)):
    """
    Detect, classify and recover a batch of readings from one stream

    **Authentication**: Requires API key in X-API-Key header

    **Returns**:
    - steps: one entry per reading with the emitted value and action per channel
    - alerts: permanent-fault alerts raised while processing the batch

    **Example**:
    ```bash
    curl -X POST "http://localhost:8000/detect/mmitss/stream" \\
      -H "X-API-Key: your_api_key" \\
      -H "Content-Type: application/json" \\
      -d '{"readings": [{"timestamp": 0.0, "latitude": 33.845, "longitude": -112.135, "speed": 12.1}]}'
    ```
    """
    _require_api_key(x_api_key)

    bundle = get_model_registry().get_model(model_id)
    if bundle is None:
        raise HTTPException(status_code=404, detail=f"Unknown model '{model_id}'")

    pipeline = StreamingPipeline(bundle)
    steps = []
    try:
        for reading in request.readings:
            speed = math.nan if reading.speed is None else reading.speed
            outputs = pipeline.process(GpsReading(reading.timestamp, reading.latitude, reading.longitude, speed))
            steps.append(StepOutput(
                timestamp=reading.timestamp,
                channels={
                    channel: ChannelOutput(
                        value=out.value,
                        action=out.action.value,
                        time_type=out.time_type.value,
                        bias_type=out.bias_type.value,
                    )
                    for channel, out in outputs.items()
                },
            ))
    except DataError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.exception("[Detect] Stream for model %s failed", model_id)
        raise HTTPException(status_code=500, detail=f"Detection failed: {str(e)}")

    alerts = [
        AlertOutput(step=a.step, timestamp=a.timestamp, channel=a.channel, run_length=a.run_length)
        for a in pipeline.alerts
    ]
    return StreamResponse(model_id=model_id, steps=steps, alerts=alerts)
