"""Feature files: the TDLF binary format, padding, and validation.

Feature matrices are float32 with one column per time frame. Files
carry the true (pre-padding) frame count so padding can be stripped
before evaluation.
"""

import tempfile
from pathlib import Path

import numpy as np

from tdl import FeatureSequence, load_feature_file, pad_features, write_feature_file
from tdl.errors import FormatError

workdir = Path(tempfile.mkdtemp(prefix="tdl-demo-"))

rng = np.random.default_rng(0)
values = rng.standard_normal((4, 6)).astype(np.float32)
seq = FeatureSequence("demo", dim=4, num_frames=6, values=values, true_frames=6)

path = workdir / "demo.tdlf"
write_feature_file(seq, path)
print(f"wrote {path} ({path.stat().st_size} bytes: 20 header + 4*6 f32 payload)")

loaded = load_feature_file(path)
print("round trip bit-exact:", loaded.values.tobytes() == values.tobytes())

padded = pad_features(loaded, 10)
print(f"padded {loaded.num_frames} -> {padded.num_frames} frames; "
      f"true_frames stays {padded.true_frames}")
print("padding columns are all zero:", not padded.values[:, 6:].any())

# corrupt files are rejected, never silently mis-read
bad = workdir / "truncated.tdlf"
bad.write_bytes(path.read_bytes()[:-7])
try:
    load_feature_file(bad)
except FormatError as exc:
    print("truncated file rejected:", exc)
