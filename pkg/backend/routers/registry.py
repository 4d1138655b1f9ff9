"""
Registry endpoints: test functions, emulator methods, scenario seeds
"""
import os
from typing import List, Optional
from fastapi import APIRouter, HTTPException
from pydantic import BaseModel

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import DomainError, NotFoundError, StubFunctionError
from services.emulators import get_emulators_list
from services.functions import evaluate, get_benchmark_functions, registry_manifest
from services.seeding import Scenario, canonical_string, scenario_seed

router = APIRouter()


class SeedRequest(BaseModel):
    """A synthetic (replication) or dataset (fold) scenario"""
    name: str
    n_train: int
    NSR: float = 0.0
    design_type: str = "LHS"
    replication: Optional[int] = None
    fold: Optional[int] = None
    cv_type: Optional[str] = None
    fold_size: Optional[int] = None


class EvaluateRequest(BaseModel):
    """Rows of unit-cube inputs for one registered function"""
    name: str
    X: List[List[float]]


@router.get("/functions")
async def list_functions():
    """Registered test functions with domains and tags"""
    return {"functions": registry_manifest(), "evaluable": get_benchmark_functions()}


@router.get("/emulators")
async def list_emulators():
    """Registered emulator methods with default hyperparameters"""
    return {"emulators": get_emulators_list()}


@router.post("/seed")
async def seed(request: SeedRequest):
    """Canonical string and seed of a scenario"""
    if request.fold is not None:
        scenario = Scenario.dataset(
            request.name, request.n_train, request.fold, request.cv_type or "cross_validation",
            request.fold_size if request.fold_size is not None else 0,
        )
    else:
        scenario = Scenario.synthetic(
            request.name, request.n_train, request.NSR, request.design_type,
            request.replication if request.replication is not None else 1,
        )
    try:
        value = scenario_seed(scenario)
    except DomainError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"canonical": canonical_string(scenario), "seed": value}


@router.post("/evaluate")
async def evaluate_function(request: EvaluateRequest):
    """Evaluate a registered function at unit-cube rows"""
    try:
        values = evaluate(request.name, request.X)
    except NotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except StubFunctionError as e:
        raise HTTPException(status_code=501, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"name": request.name, "values": values.tolist()}
