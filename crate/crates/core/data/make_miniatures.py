"""Regenerates the bundled miniature traces. Output is deterministic."""

import random
from pathlib import Path

HERE = Path(__file__).resolve().parent


def zipf_weights(n, s):
    w = [i ** -s for i in range(1, n + 1)]
    h = sum(w)
    return [x / h for x in w]


def count_trace(name, movies, days, total_rate, exponent, seed):
    rng = random.Random(seed)
    horizon = days * 24.0
    weights = zipf_weights(movies, exponent)
    rng.shuffle(weights)
    lines = [f"# {name}: movie_id,upload_time_hours,total_views,horizon_hours"]
    for movie, w in enumerate(weights, start=1):
        upload = round(rng.uniform(0.0, 0.9 * horizon), 3)
        views = round(total_rate * w * (horizon - upload))
        lines.append(f"{movie},{upload},{views},{horizon}")
    (HERE / f"{name}.csv").write_text("\n".join(lines) + "\n")


def day_trace(name, movies, days, ratings, exponent, seed):
    rng = random.Random(seed)
    horizon = days * 24.0
    weights = zipf_weights(movies, exponent)
    release = [rng.uniform(0.0, 0.7 * horizon) for _ in range(movies)]
    rate = ratings / sum(w * (horizon - r) for w, r in zip(weights, release))
    events = []
    for movie, (w, r) in enumerate(zip(weights, release), start=1):
        t = r
        while True:
            t += rng.expovariate(rate * w)
            if t >= horizon:
                break
            events.append((int(t // 24), rng.random(), movie))
    events.sort()
    lines = [f"# {name}: time_hours,movie_id (day granularity, no ads)"]
    lines += [f"{day * 24},{movie}" for day, _, movie in events]
    (HERE / f"{name}.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    count_trace("daum-mini", movies=300, days=160, total_rate=1.0, exponent=0.8, seed=11)
    day_trace("netflix-mini", movies=150, days=2237, ratings=12000, exponent=0.8, seed=12)
    count_trace("youtube-mini", movies=2000, days=570, total_rate=10.0, exponent=0.8, seed=13)
