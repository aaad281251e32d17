import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np

from .auxmdp import AuxState
from .config import DEFAULT_THREADS
from .export import append_trajectories
from .kawasaki import RngStream, simulate_controlled
from .models import AuxAction, Dynamics, InterchangeMode, KernelVariant
from .schemas import EpisodeBatch, ModelParams, RewardSpec, Trajectory

logger = logging.getLogger(__name__)


def _run_chunk(task: Tuple) -> Tuple[int, np.ndarray, int, int, List[Trajectory]]:
    (first, count, seed, policy, start, lam, spec, params, mode, dynamics, variant,
     max_epochs, keep) = task
    returns = np.empty(count)
    absorbed = 0
    unresolved = 0
    kept = []
    for offset in range(count):
        rng = RngStream(seed, first + offset).generator()
        trajectory = simulate_controlled(policy, start, lam, spec, rng, params, mode=mode,
                                         max_epochs=max_epochs, dynamics=dynamics, variant=variant,
                                         record=keep, truncate=True)
        returns[offset] = trajectory.discounted_return
        absorbed += trajectory.hit_target
        unresolved += trajectory.unresolved
        if keep:
            kept.append(trajectory)
    return first, returns, absorbed, unresolved, kept


class EpisodeWorker:
    """Runs batches of controlled trajectories over a process pool

    Episode k always draws from stream k of the seed, so results do not depend
    on the number of workers or on the batch layout.
    """

    def __init__(self, threads: Optional[int] = None, worker_id: Optional[str] = None):
        self.threads = max(1, threads or DEFAULT_THREADS)
        self.worker_id = worker_id or f"worker-{os.getpid()}"
        logger.info(f"Episode worker {self.worker_id} using {self.threads} processes")

    def run(self, policy: Dict[AuxState, AuxAction], start: Tuple[int, int], lam: float, spec: RewardSpec,
            params: ModelParams, episodes: int, seed: int,
            mode: InterchangeMode = InterchangeMode.ZERO_T,
            dynamics: Dynamics = Dynamics.LATTICE,
            variant: KernelVariant = KernelVariant.FULL,
            max_epochs: Optional[int] = None,
            trajectory_path: Optional[str] = None) -> EpisodeBatch:
        if episodes < 1:
            raise ValueError("episodes must be at least 1")
        start = AuxState(*start)
        keep = trajectory_path is not None
        chunk = max(1, math.ceil(episodes / (self.threads * 4)))
        tasks = [
            (first, min(chunk, episodes - first), seed, dict(policy), start, lam, spec, params,
             mode, dynamics, variant, max_epochs, keep)
            for first in range(0, episodes, chunk)
        ]

        start_time = time.time()
        returns = np.empty(episodes)
        if self.threads == 1 or len(tasks) == 1:
            results = map(_run_chunk, tasks)
            absorbed, unresolved = self._collect(results, returns, trajectory_path, start_time)
        else:
            with ProcessPoolExecutor(max_workers=self.threads) as pool:
                absorbed, unresolved = self._collect(pool.map(_run_chunk, tasks), returns, trajectory_path,
                                                    start_time)

        mean = float(np.sum(returns) / episodes)
        std = float(np.std(returns, ddof=1)) if episodes > 1 else 0.0
        batch = EpisodeBatch(start=tuple(start), seed=seed, episodes=episodes, mean=mean, std=std,
                             stderr=std / math.sqrt(episodes), absorbed=absorbed, unresolved=unresolved)
        logger.info(f"Start {start}: mean return {mean:.6g} ± {batch.stderr:.2g} over {episodes} episodes "
                    f"in {time.time() - start_time:.2f}s")
        return batch

    def _collect(self, results, returns: np.ndarray, trajectory_path: Optional[str],
                 start_time: float) -> Tuple[int, int]:
        absorbed = 0
        unresolved = 0
        # map preserves submission order, so trajectories are written in episode order
        for first, chunk_returns, chunk_absorbed, chunk_unresolved, kept in results:
            returns[first:first + len(chunk_returns)] = chunk_returns
            absorbed += chunk_absorbed
            unresolved += chunk_unresolved
            if trajectory_path is not None:
                append_trajectories(trajectory_path, kept, first_episode=first)
            logger.info(f"Batch {first}-{first + len(chunk_returns) - 1} completed in "
                        f"{time.time() - start_time:.2f}s: {len(chunk_returns)} episodes, "
                        f"{chunk_absorbed} absorbed, {chunk_unresolved} unresolved")
        return absorbed, unresolved


def run_episodes(policy: Dict[AuxState, AuxAction], start: Tuple[int, int], lam: float, spec: RewardSpec,
                 params: ModelParams, episodes: int, seed: int, threads: Optional[int] = None,
                 **options) -> EpisodeBatch:
    return EpisodeWorker(threads).run(policy, start, lam, spec, params, episodes, seed, **options)
