"""
Computing only some query rows of attention
===========================================

Row ``i`` of an attention output depends on query ``i`` and on *all* keys and
values. Dropping query rows therefore changes nothing for the rows we keep.
"""

import numpy as np

from astraea.attention import AttentionWeights, self_attention_dense, self_attention_sparse
from astraea.numerics import Rng, count_flops, track_buffers

rng = Rng(0)
n, d = 48, 16
x = rng.gauss_matrix(n, d)
w = AttentionWeights.init(d, rng)

###############################################################################
# Dense attention over every token, then a sparse call that keeps ten rows.

dense, lse = self_attention_dense(x, w)
keep = np.array([0, 3, 4, 9, 17, 21, 30, 31, 40, 47])
sparse, lse_keep = self_attention_sparse(x, w, keep)

print("max |sparse - dense[keep]| =", np.max(np.abs(sparse - dense[keep])))
print("sum-exp scores agree:      ", np.allclose(lse_keep, lse[keep], rtol=1e-12))

###############################################################################
# What we saved. The score buffer shrinks from N x N to |keep| x N, and the
# counter shows where the multiply-adds went.

for rows in (n, 24, 10, 1):
    with count_flops() as c, track_buffers() as buf:
        self_attention_sparse(x, w, np.arange(rows))
    tags = c.by_tag()
    print(f"rows={rows:3d}  flops={c.total:8d}  scores={tags['scores']:7d}  buffer={buf.shapes[0]}")
