import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qdsim.emitter import EmitterConfig, OUParams
from qdsim.stream import TagStream


@pytest.fixture(scope="session")
def calibrated():
    """The shipped plateau-center device."""
    return EmitterConfig()


@pytest.fixture(scope="session")
def quiet_config():
    """Emitter with every noise channel off: one photon per fire, fixed frequency."""
    return EmitterConfig(dephasing_rate_intrinsic=0.0,
                         diffusion=OUParams(0.0, 1e-9),
                         reexcitation_prob=0.0)


def make_stream(channels, timestamps, duration=None, freqs=None, dephs=None,
                metadata=None, labels=None):
    """Sorted TagStream from plain lists; truth arrays optional."""
    ch = np.asarray(channels, dtype=np.uint8)
    ts = np.asarray(timestamps, dtype=np.int64)
    order = np.lexsort((ch, ts))
    if duration is None:
        duration = int(ts.max()) if len(ts) else 0
    fr = None if freqs is None else np.asarray(freqs, dtype=float)[order]
    de = None if dephs is None else np.asarray(dephs, dtype=float)[order]
    return TagStream(ch[order], ts[order], duration, labels, metadata,
                     truth_frequency=fr, truth_dephasing_rate=de)
