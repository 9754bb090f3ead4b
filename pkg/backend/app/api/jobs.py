"""
Shared plumbing for the HTTP routes: scenario runtimes are built and the
numerical work runs in the threadpool; domain errors map to status codes.
"""

import logging
from typing import Callable, TypeVar

from fastapi import HTTPException
from starlette.concurrency import run_in_threadpool

from app.core.errors import ConfigError, OrbitMateError

logger = logging.getLogger(__name__)

T = TypeVar("T")


async def run_job(name: str, job: Callable[[], T]) -> T:
    try:
        return await run_in_threadpool(job)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=e.to_dict())
    except OrbitMateError as e:
        logger.warning(f"❌ {name}: {type(e).__name__}: {e.message}")
        raise HTTPException(status_code=422, detail=e.to_dict())
    except HTTPException:
        raise
    except Exception as e:
        logger.exception(f"❌ {name} failed")
        raise HTTPException(status_code=500, detail=f"{name} failed: {str(e)}")
