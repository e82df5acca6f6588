"""Co-training sampling manifests: a fixed robot:human mix in every mini-batch.

Within each source, episodes are drawn uniformly without replacement and the
pool is reshuffled each time it runs out, so a small robot pool is covered
every ``ceil(pool / per_batch)`` batches. The frame inside the chosen episode
is drawn uniformly. Everything flows from one seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyPool, InvalidRatio, IoError

SOURCES = ("robot", "human")


def parse_ratio(text) -> tuple:
    """``"1:2"`` -> ``(1.0, 2.0)``."""
    if isinstance(text, (tuple, list)):
        parts = list(text)
    else:
        parts = str(text).split(":")
    if len(parts) != 2:
        raise InvalidRatio(f"ratio must look like 'robot:human', got {text!r}")
    try:
        r, h = (float(p) for p in parts)
    except ValueError:
        raise InvalidRatio(f"ratio parts must be numbers, got {text!r}") from None
    if not (math.isfinite(r) and math.isfinite(h)) or r < 0 or h < 0 or r + h <= 0:
        raise InvalidRatio(f"ratio needs non-negative parts with a positive sum, got {text!r}")
    return r, h


def split_batch(batch_size: int, ratio) -> tuple:
    """Per-batch (robot, human) counts; robot share rounded half-up."""
    r, h = parse_ratio(ratio)
    if batch_size < 1:
        raise InvalidRatio(f"batch size must be >= 1, got {batch_size}")
    n_robot = int(math.floor(batch_size * r / (r + h) + 0.5))
    return n_robot, batch_size - n_robot


@dataclass(eq=False)
class SampleManifest:
    ratio: tuple
    batch_size: int
    seed: int
    robot_ids: list
    human_ids: list
    robot: np.ndarray  # (n_batches, n_robot, 2): episode index, frame index
    human: np.ndarray  # (n_batches, n_human, 2)
    human_frames: str = "aligned"

    @property
    def n_batches(self):
        return len(self.robot)

    def batch(self, i):
        out = [("robot", self.robot_ids[e], int(f)) for e, f in self.robot[i]]
        out += [("human", self.human_ids[e], int(f)) for e, f in self.human[i]]
        return out

    def batches(self):
        for i in range(self.n_batches):
            yield self.batch(i)


def _draw(pool, count, n_batches, rng):
    """``(n_batches, count, 2)`` draws of (episode index, frame index)."""
    if count == 0:
        return np.zeros((n_batches, 0, 2), dtype=np.int64)
    lengths = np.array([n for _, n in pool], dtype=np.int64)
    total = n_batches * count
    perms = [rng.permutation(len(pool)) for _ in range(-(-total // len(pool)))]
    episodes = np.concatenate(perms)[:total]
    frames = rng.integers(0, lengths[episodes])
    return np.stack([episodes, frames], axis=1).reshape(n_batches, count, 2)


def build_manifest(robot_eps, human_eps, ratio=(1, 2), batch_size=256, n_batches=20000,
                   seed=0, human_frames="aligned") -> SampleManifest:
    """Deterministic batch schedule.

    ``robot_eps`` / ``human_eps`` are sequences of ``(episode_id, n_frames)``
    where ``n_frames`` is the number of sampleable frame indices. Pools are
    sorted by id first, so the schedule does not depend on listing order.
    """
    r, h = parse_ratio(ratio)
    n_robot, n_human = split_batch(batch_size, (r, h))
    if n_batches < 0:
        raise ValueError(f"n_batches must be >= 0, got {n_batches}")
    pools = {"robot": sorted(robot_eps), "human": sorted(human_eps)}
    counts = {"robot": n_robot, "human": n_human}
    draws = {}
    for k, source in enumerate(SOURCES):
        pool = pools[source]
        if counts[source] > 0 and not pool:
            raise EmptyPool(f"ratio {r:g}:{h:g} needs {source} episodes but the pool is empty")
        for eid, n in pool:
            if n < 1:
                raise EmptyPool(f"{source} episode {eid!r} has no frames to sample")
        rng = np.random.default_rng([int(seed), k])
        draws[source] = _draw(pool, counts[source], n_batches, rng)
    return SampleManifest(
        ratio=(r, h),
        batch_size=batch_size,
        seed=int(seed),
        robot_ids=[eid for eid, _ in pools["robot"]],
        human_ids=[eid for eid, _ in pools["human"]],
        robot=draws["robot"],
        human=draws["human"],
        human_frames=human_frames,
    )


def write_manifest(m: SampleManifest, path):
    """JSON Lines: a header record, then one record per batch."""
    header = {
        "kind": "header",
        "ratio": [m.ratio[0], m.ratio[1]],
        "batch_size": m.batch_size,
        "n_batches": m.n_batches,
        "seed": m.seed,
        "robot_per_batch": m.robot.shape[1],
        "human_per_batch": m.human.shape[1],
        "human_frames": m.human_frames,
    }
    robot_ids = [json.dumps(e) for e in m.robot_ids]
    human_ids = [json.dumps(e) for e in m.human_ids]
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(m.n_batches):
            parts = [f'["robot",{robot_ids[e]},{f}]' for e, f in m.robot[i].tolist()]
            parts += [f'["human",{human_ids[e]},{f}]' for e, f in m.human[i].tolist()]
            fh.write('{"batch":%d,"samples":[%s]}\n' % (i, ",".join(parts)))


def read_manifest(path):
    """Header dict and list of batches (each a list of ``(source, id, frame)``)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from None
    if not lines:
        raise IoError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    batches = [[tuple(s) for s in json.loads(line)["samples"]] for line in lines[1:]]
    return header, batches
