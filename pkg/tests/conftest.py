import numpy as np
import pytest

from sgsynth.primitives import Engine
from sgsynth.ring import FixedPointCodec
from sgsynth.sharing import share_vector
from sgsynth.transport import run_three_party_local


def run_op(op, plain_inputs=(), *, f=16, k=64, seed=7, deal_seed=11,
           timeout=30.0, agree=True):
    """Share the plaintext inputs, run `op(engine, *shares)` on all three
    parties over the local harness, and return party 1's result.

    `op` is responsible for revealing whatever it returns. With agree=True
    every party's result must match party 1's.
    """
    codec = FixedPointCodec(f, k)
    rng = np.random.default_rng(deal_seed)
    triples = [share_vector(np.asarray(arr, dtype=np.uint64), rng, codec.ring)
               for arr in plain_inputs]

    def party(links, p):
        eng = Engine(links, codec, seed=seed)
        eng.setup()
        return op(eng, *[t[p - 1] for t in triples])

    results = run_three_party_local(party, [(), (), ()], timeout=timeout)
    if agree:
        for other in results[1:]:
            np.testing.assert_array_equal(np.asarray(results[0]), np.asarray(other))
    return results[0]


def encode_signed(codec: FixedPointCodec, values) -> np.ndarray:
    return codec.encode_array(np.asarray(values, dtype=np.float64))


@pytest.fixture
def codec():
    return FixedPointCodec(16, 64)
