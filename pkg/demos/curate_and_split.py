# Curating a tempo-stratified corpus and splitting it for cross-validation.
#
# A catalogue rarely has the same number of tracks per sub-genre. Here
# drum & bass is plentiful, chill is scarce, and we want 98 tracks spread
# as evenly as the catalogue allows.

import numpy as np

from edmseg.corpus import (DEFAULT_TABLE, TrackRecord, allocate_equal, bpm_stats, make_splits,
                           select_tracks, stratum_counts)

rng = np.random.default_rng(0)
available = {"house": 200, "electro": 60, "techno": 60, "trance": 60, "dubstep": 40,
             "dnb": 4000, "chill": 9}

# fake catalogue: tempos drawn uniformly inside each stratum's BPM bucket
catalogue = []
for name, lo, hi in DEFAULT_TABLE.buckets:
    for i in range(available[name]):
        catalogue.append(TrackRecord(f"{name}-{i:04d}", round(rng.uniform(lo, hi), 2)))

counts = stratum_counts(catalogue, DEFAULT_TABLE)
print("available per stratum:", counts)

plan = allocate_equal(counts, 98, DEFAULT_TABLE.residual_priority)
print("allocation:", plan.allocated)
# chill can only give 9, so its shortfall is spread over the others;
# the one indivisible leftover goes to house, the first stratum in priority order
for name, k in plan.allocated.items():
    print(f"  {name:8s} {k:3d}  {100 * k / 98:5.1f} %")

chosen = select_tracks(catalogue, plan, DEFAULT_TABLE, seed=42)
st = bpm_stats(chosen)
print(f"\nselected {st.n} tracks: mean {st.mean:.2f} BPM, median {st.median:.2f}, "
      f"sd {st.sd:.2f}, range {st.min:.1f}-{st.max:.1f}")

split = make_splits([r.track_id for r in chosen], test_count=10, k=5, seed=42)
print(f"\ntrain {len(split.train_ids)} / test {len(split.test_ids)}")
print("fold sizes:", [len(f) for f in split.folds])
