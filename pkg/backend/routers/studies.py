"""
Study endpoints: run synthetic or dataset studies as background jobs
"""
import os
import uuid
import logging
from fastapi import APIRouter, HTTPException, BackgroundTasks

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import StudyConfig, validate_study_config
from errors import ConfigError
from services.harness import run_data_study, run_study, write_study

logger = logging.getLogger("duqbench.studies")

router = APIRouter()

# Track study jobs by id
active_jobs = {}

FINISHED = ("completed", "failed")


def clear_finished_jobs():
    """Forget jobs that are no longer running"""
    for job_id in [j for j, job in active_jobs.items() if job["status"] in FINISHED]:
        del active_jobs[job_id]


def run_study_job(job_id: str, config: StudyConfig):
    """Background task: run the study and write results into config.out"""
    job = active_jobs[job_id]
    job["status"] = "running"

    def update_progress(done: int, total: int):
        job["completed"] = done
        job["total"] = total
        job["progress"] = 100.0 * done / total if total else 100.0

    try:
        runner = run_study if job["kind"] == "synthetic" else run_data_study
        table, manifest = runner(config, update_progress)
        results_path, manifest_path = write_study(config.out, table, manifest)
        job["status"] = "completed"
        job["result"] = {
            "results": results_path,
            "manifest": manifest_path,
            "rows": len(table),
            "fallbacks": int((table["failure_type"] != "none").sum()),
        }
    except Exception as e:
        logger.warning("Study %s failed: %s", job_id, e)
        job["status"] = "failed"
        job["error"] = f"{type(e).__name__}: {e}"


@router.post("")
async def start_study(config: StudyConfig, background_tasks: BackgroundTasks):
    """Validate a study config and start it in the background"""
    try:
        validate_study_config(config)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))

    kind = "synthetic" if config.functions else "dataset"
    job_id = f"study_{uuid.uuid4().hex[:12]}"
    active_jobs[job_id] = {
        "status": "queued",
        "kind": kind,
        "progress": 0,
        "completed": 0,
        "total": None,
        "out": config.out,
    }
    background_tasks.add_task(run_study_job, job_id, config)
    return {"job_id": job_id, "status": "started"}


@router.get("")
async def list_studies():
    """List all study jobs"""
    return {"jobs": active_jobs}


@router.get("/{job_id}")
async def get_study(job_id: str):
    """Get status of a study job"""
    if job_id not in active_jobs:
        raise HTTPException(status_code=404, detail=f"Job not found: {job_id}")
    return active_jobs[job_id]
