"""FastAPI backend for the DSMT simulator."""

import logging
import sys
import time
from pathlib import Path
from typing import Dict, Tuple

from fastapi import FastAPI, File, HTTPException, UploadFile, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import ValidationError

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Add parent directory to path for core imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.assembler import assemble
from core.cache_manager import CacheManager, CachedProgram
from core.config import SimConfig, build_config
from core.errors import SimulatorError
from core.harness import run_experiment
from core.kernels import kernel_source, list_kernels, load_kernel
from core.report import SimReport
from api.models import (
    CacheStats, KernelInfo, ProgramInfo, RunRequest, SweepRequest, WebSocketMessage
)

app = FastAPI(title="DSMT Simulator API", version="1.0.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Initialize cache manager (singleton)
cache = CacheManager()

# Active WebSocket connections
active_connections: Dict[str, WebSocket] = {}

LOAD_ERRORS = (SimulatorError, OSError, ValidationError, ValueError)


def _program_info(cached: CachedProgram) -> ProgramInfo:
    return ProgramInfo(
        program_id=cached.program_id,
        name=cached.name,
        text_words=len(cached.program.words),
        data_words=len(cached.program.data),
    )


def _prepare(request: RunRequest) -> Tuple[CachedProgram, SimConfig]:
    """Look up or assemble the program and build its configuration.

    Raises:
        HTTPException: 404 for an unknown program id, 400 for anything that does not load
    """
    if request.program_id is not None:
        cached = cache.get_program(request.program_id)
        if cached is None:
            raise HTTPException(status_code=404, detail="Program not found")
    else:
        try:
            source = kernel_source(request.kernel)
            program = assemble(source, request.defines)
        except LOAD_ERRORS as e:
            raise HTTPException(status_code=400, detail=str(e))
        cached = cache.add_program(request.kernel, source, program, request.defines)

    try:
        config = build_config(request.overrides())
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"Invalid configuration: {e}")
    return cached, config


async def _run(request: RunRequest) -> SimReport:
    cached, config = _prepare(request)
    report = cache.get_report(cached.program_id, config)
    if report is not None:
        return report

    start_time = time.time()
    try:
        report = await run_in_threadpool(run_experiment, config, cached.program, cached.name)
    except SimulatorError as e:
        raise HTTPException(status_code=400, detail=str(e))
    cache.set_report(cached.program_id, config, report)
    logger.info(f"Run of {cached.name} served in {time.time() - start_time:.3f}s")
    return report


@app.get("/")
async def root():
    """Health check endpoint."""
    return {"status": "running", "service": "DSMT Simulator API"}


@app.get("/api/kernels", response_model=list[KernelInfo])
async def get_kernels():
    """List the shipped kernels with their default sizes."""
    kernels = []
    for name in list_kernels():
        program = load_kernel(name)
        kernels.append(KernelInfo(
            name=name,
            source_lines=len(kernel_source(name).splitlines()),
            text_words=len(program.words),
            data_words=len(program.data),
        ))
    return kernels


@app.post("/api/kernel/upload", response_model=ProgramInfo)
async def upload_kernel(file: UploadFile = File(...)):
    """Upload an assembly listing and get its program id."""
    if not file.filename.endswith('.asm'):
        raise HTTPException(status_code=400, detail="File must be an .asm listing")

    content = await file.read()
    try:
        source = content.decode()
        program = assemble(source)
    except (UnicodeDecodeError, SimulatorError) as e:
        raise HTTPException(status_code=400, detail=f"Invalid kernel: {str(e)}")

    cached = cache.add_program(Path(file.filename).stem, source, program)
    return _program_info(cached)


@app.post("/api/run", response_model=SimReport)
async def run(request: RunRequest):
    """Run one configuration and return its report."""
    return await _run(request)


@app.get("/api/cache/stats", response_model=CacheStats)
async def get_cache_stats():
    """Get cache statistics."""
    stats = cache.get_stats()
    return CacheStats(**stats)


@app.delete("/api/cache/clear/{program_id}")
async def clear_program_cache(program_id: str):
    """Clear cache for a specific program."""
    if not cache.clear_program(program_id):
        raise HTTPException(status_code=404, detail="Program not found")
    return {"message": f"Cache cleared for program {program_id}"}


@app.websocket("/ws/sweep/{client_id}")
async def websocket_sweep(websocket: WebSocket, client_id: str):
    """Run a sweep and stream each report as it completes."""
    await websocket.accept()
    active_connections[client_id] = websocket

    try:
        while True:
            data = await websocket.receive_json()
            try:
                sweep = SweepRequest(**data)
            except ValidationError as e:
                await websocket.send_json(WebSocketMessage(type="error", error=str(e)).model_dump())
                continue

            for index, request in enumerate(sweep.runs):
                try:
                    report = await _run(request)
                except HTTPException as e:
                    message = WebSocketMessage(type="error", index=index, error=str(e.detail))
                else:
                    message = WebSocketMessage(type="run_complete", index=index,
                                               data=report.model_dump(mode="json"))
                await websocket.send_json(message.model_dump())

            await websocket.send_json(
                WebSocketMessage(type="sweep_complete", data={"runs": len(sweep.runs)}).model_dump()
            )

    except WebSocketDisconnect:
        del active_connections[client_id]
    except Exception as e:
        await websocket.send_json({
            "type": "error",
            "error": str(e)
        })
        del active_connections[client_id]


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
