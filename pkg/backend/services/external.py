"""
External emulators over a line-delimited JSON protocol on stdin/stdout.

    -> {"op": "fit", "X": [[...]], "y": [...], "seed": s}
    <- {"ok": true, "model_id": "..."}
    -> {"op": "predict", "model_id": "...", "X": [[...]], "M": m, "seed": s}
    <- {"ok": true, "draws": [[...], ...]}          (M rows)
    <- {"ok": false, "stage": "fit" | "pred", "msg": "..."}

One process serves one fitted model; it is started at fit and closed on release.
"""
import os
import json
import queue
import shlex
import logging
import threading
import subprocess
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import EmulatorFailure, FitFailure, PredictFailure

logger = logging.getLogger("duqbench.external")

STDERR_TAIL_LINES = 50
DIAGNOSTICS_CHARS = 500
_EOF = object()


def _failure(stage: str, reason: str, diagnostics: str = "") -> EmulatorFailure:
    cls = FitFailure if stage == "fit" else PredictFailure
    return cls(reason, diagnostics[:DIAGNOSTICS_CHARS])


class ExternalProcess:
    """A running external emulator with a reader thread feeding a queue"""

    def __init__(self, command: Union[str, Sequence[str]], timeout: Optional[float] = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise FitFailure(f"Could not start external emulator {self.command[0]}: {e}") from None
        self._lines: "queue.Queue" = queue.Queue()
        self._stderr: deque = deque(maxlen=STDERR_TAIL_LINES)
        threading.Thread(target=self._read_stdout, daemon=True).start()
        self._stderr_reader = threading.Thread(target=self._read_stderr, daemon=True)
        self._stderr_reader.start()

    def _read_stdout(self) -> None:
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _read_stderr(self) -> None:
        for line in self.proc.stderr:
            self._stderr.append(line)

    def stderr_tail(self) -> str:
        if self.proc.poll() is not None:
            # drain what the exited process wrote
            self._stderr_reader.join(timeout=1)
        return "".join(self._stderr)

    def request(self, payload: dict, stage: str) -> dict:
        """Send one request and wait for its reply line"""
        try:
            self.proc.stdin.write(json.dumps(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            code = self.proc.wait()
            raise _failure(stage, f"external emulator exited with code {code}", self.stderr_tail()) from None

        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise _failure(stage, f"timeout after {self.timeout}s", self.stderr_tail()) from None

        if line is _EOF:
            code = self.proc.wait()
            raise _failure(stage, f"external emulator exited with code {code}", self.stderr_tail())

        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise _failure(stage, f"protocol violation: non-JSON reply {line[:80]!r}", self.stderr_tail()) from None
        if not isinstance(reply, dict) or "ok" not in reply:
            raise _failure(stage, "protocol violation: reply lacks 'ok'", self.stderr_tail())
        if not reply["ok"]:
            reported = reply.get("stage", stage)
            raise _failure(reported if reported in ("fit", "pred") else stage,
                           str(reply.get("msg", "external emulator reported failure")),
                           self.stderr_tail())
        return reply

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=1)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


@dataclass
class ExternalModel:
    process: ExternalProcess
    model_id: str

    def close(self) -> None:
        self.process.close()


def fit_external(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    command: Union[str, List[str]] = None,
    timeout: Optional[float] = None,
) -> ExternalModel:
    process = ExternalProcess(command, timeout)
    try:
        reply = process.request({"op": "fit", "X": X.tolist(), "y": y.tolist(), "seed": int(seed)}, "fit")
    except EmulatorFailure:
        process.close()
        raise
    if "model_id" not in reply:
        process.close()
        raise FitFailure("protocol violation: fit reply lacks 'model_id'", process.stderr_tail())
    logger.debug("external %s fitted model %s", process.command[0], reply["model_id"])
    return ExternalModel(process, str(reply["model_id"]))


def predict_external(state: ExternalModel, X: np.ndarray, M: int, seed: int) -> np.ndarray:
    reply = state.process.request(
        {"op": "predict", "model_id": state.model_id, "X": X.tolist(), "M": int(M), "seed": int(seed)},
        "pred",
    )
    try:
        draws = np.asarray(reply["draws"], dtype=np.float64)
    except (KeyError, TypeError, ValueError):
        raise PredictFailure("protocol violation: predict reply lacks numeric 'draws'") from None
    if draws.shape != (int(M), X.shape[0]):
        raise PredictFailure(f"protocol violation: draws shape {draws.shape}, expected {(int(M), X.shape[0])}")
    return draws
