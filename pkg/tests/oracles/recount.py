"""Single-pass recount of revision ratios and difficulty buckets straight from raw log files.

Deliberately imports nothing from the package: it re-derives command
normalization, stage mapping and tercile cuts on its own so that it can
serve as an independent check of the metrics module.

    python tests/oracles/recount.py LOG.jsonl [LOG.jsonl ...]
"""

from __future__ import annotations

import json
import sys
from fractions import Fraction


def _norm_item(part: str) -> str:
    words = part.split()
    if len(words) > 1 and words[0] == "1":
        words = words[1:]
    return " ".join(words)


def norm(command: str) -> str:
    s = " ".join(command.lower().split())
    if s.startswith("get "):
        return "get " + _norm_item(s[4:])
    if s.startswith("craft ") and " using " in s:
        out, ins = s[6:].split(" using ", 1)
        parts = sorted(_norm_item(p.strip()) for p in ins.split(","))
        return "craft " + _norm_item(out) + " using " + ", ".join(parts)
    return s


def read(path: str) -> dict:
    lines = [json.loads(ln) for ln in open(path, encoding="utf-8") if ln.strip()]
    header, body = lines[0], lines[1:]
    steps = [ln for ln in body if "t" in ln]
    footer = body[-1] if body and "t" not in body[-1] else {}
    return {"header": header, "steps": steps, "footer": footer}


def usable(log: dict) -> bool:
    return bool(log["steps"]) and not log["footer"].get("aborted", False) and "final_reward" in log["footer"]


def recount_revisions(paths) -> list[tuple[int, int]]:
    revised, total = [0] * 5, [0] * 5
    for path in paths:
        log = read(path)
        if not usable(log):
            continue
        n = len(log["steps"])
        for step in log["steps"]:
            # smallest stage s with s * n >= 5 * (t + 1)
            s = 1
            while s < 5 and s * n < 5 * (step["t"] + 1):
                s += 1
            total[s - 1] += 1
            if norm(step["action"]["command"]) != norm(step["candidates"][0]["command"]):
                revised[s - 1] += 1
    return list(zip(revised, total))


def recount_buckets(paths) -> list[tuple[int, int, Fraction | None]]:
    """(tasks, episodes, mean final reward) for each of the three length terciles."""
    logs = [read(p) for p in paths]
    lengths = {}
    for log in logs:
        lengths[log["header"]["task_id"]] = log["header"]["oracle_length"]
    xs = sorted(lengths.values())
    n = len(xs)
    q1 = xs[-(-n // 3) - 1]
    q2 = xs[-(-2 * n // 3) - 1]

    def bucket(length: int) -> int:
        if length <= q1:
            return 0
        return 1 if length <= q2 else 2

    tasks, eps, sums = [0, 0, 0], [0, 0, 0], [Fraction(0)] * 3
    for length in lengths.values():
        tasks[bucket(length)] += 1
    for log in logs:
        if not usable(log):
            continue
        b = bucket(log["header"]["oracle_length"])
        eps[b] += 1
        sums[b] += Fraction(str(log["footer"]["final_reward"]))
    return [(tasks[b], eps[b], sums[b] / eps[b] if eps[b] else None) for b in range(3)]


if __name__ == "__main__":
    paths = sys.argv[1:]
    print(json.dumps({
        "revisions": recount_revisions(paths),
        "buckets": [[t, e, None if m is None else str(m)] for t, e, m in recount_buckets(paths)],
    }))
