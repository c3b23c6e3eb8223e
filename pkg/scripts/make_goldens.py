#!/usr/bin/env python3
"""Freeze the reference end-to-end run: train on the 256^3 demo CT
phantom, curate the dense-structure (bone-like) node cluster into a
replay script, render it, and record the golden pixel hash.

Outputs (committed to the repo):
  scripts/bone_replay.json   the shipped replay script
  goldens/bone_replay.json   recipe + sha256 of the rendered pixels
  goldens/bone_replay.png    the reference image (visual documentation)

Rerun only to re-freeze after an intentional pipeline change.
"""

import hashlib
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

import somdvr  # noqa: E402
from somdvr.features import build_feature_field, sample_features  # noqa: E402
from somdvr.groups import GroupRegistry, build_color_volume  # noqa: E402
from somdvr.lattice import TrainingParams, build_lattice  # noqa: E402
from somdvr.render import RenderSettings, default_camera, raycast, write_png  # noqa: E402
from somdvr.som import assign_voxels, train  # noqa: E402

RECIPE = {
    "phantom": "demo-ct",
    "dims": [256, 256, 256],
    "level": 3,
    "epochs": 20,
    "eta0": 0.5,
    "eta_min": 0.01,
    "sigma0": 0.7853981633974483,
    "sigma_min": 0.02,
    "seed": 7,
    "stride": 336,
    "width": 512,
    "height": 512,
    "step": 0.5,
    "bone_intensity_threshold": 0.6,
    "script": "scripts/bone_replay.json",
}


def main() -> int:
    print("generating demo volume...", flush=True)
    vol = somdvr.make_demo_ct(tuple(RECIPE["dims"]))
    field = build_feature_field(vol)
    params = TrainingParams(
        epochs=RECIPE["epochs"], eta0=RECIPE["eta0"], eta_min=RECIPE["eta_min"],
        sigma0=RECIPE["sigma0"], sigma_min=RECIPE["sigma_min"],
        seed=RECIPE["seed"], stride=RECIPE["stride"],
    )
    _, samples = sample_features(field, params.stride, params.seed)
    print(f"training on {samples.shape[0]} samples...", flush=True)
    lattice = build_lattice(RECIPE["level"], seed=params.seed)
    train(lattice, samples, params, channel_weights=field.weights)
    print("assigning voxels...", flush=True)
    assignment = assign_voxels(lattice, field)

    # curate the dense-structure cluster: nodes whose member voxels are
    # bright on average
    means = np.full(lattice.n_nodes, -1.0)
    for n in range(lattice.n_nodes):
        members = assignment.members_of_node(n)
        if members.size:
            means[n] = vol.intensities[members].mean()
    bone_nodes = np.nonzero(means >= RECIPE["bone_intensity_threshold"])[0]
    print(f"bone cluster: {len(bone_nodes)} nodes, "
          f"{sum(len(assignment.members_of_node(n)) for n in bone_nodes)} voxels",
          flush=True)
    script = [{"node_ids": [int(n) for n in bone_nodes]}]
    (ROOT / "scripts" / "bone_replay.json").write_text(json.dumps(script) + "\n")

    registry = GroupRegistry()
    registry.define(script[0]["node_ids"], assignment, vol)
    color_volume = build_color_volume(registry.groups, vol, field)
    settings = RenderSettings(width=RECIPE["width"], height=RECIPE["height"],
                              step=RECIPE["step"])
    print("rendering...", flush=True)
    img = raycast(color_volume, vol, default_camera(vol), settings)
    sha = hashlib.sha256(img.pixels.tobytes()).hexdigest()

    goldens = ROOT / "goldens"
    goldens.mkdir(exist_ok=True)
    write_png(img, goldens / "bone_replay.png")
    golden = {"recipe": RECIPE, "pixel_sha256": sha,
              "bone_node_count": int(len(bone_nodes))}
    (goldens / "bone_replay.json").write_text(json.dumps(golden, indent=2) + "\n")
    print("golden sha256:", sha)
    return 0


if __name__ == "__main__":
    sys.exit(main())
