"""Regenerate the small Intel-format fixture shipped in ``src/nwfr/data``.

Five sensors report every five minutes over the default analysis day.  The
file also holds a humidity spike, a one-hour outage, a low-voltage reading,
two malformed lines, readings before the analysis window and a sixth sensor
that only reports on an earlier day.
"""

import math
from datetime import datetime, timedelta
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "nwfr" / "data"
START = datetime(2004, 3, 1, 21, 0)


def values(sensor, k):
    phase = 2 * math.pi * k / 288
    temp = 19.0 + 0.5 * sensor + 3.0 * math.sin(phase + 0.2 * sensor)
    hum = 45.0 - 0.9 * temp + 2.0 * math.cos(phase) + 0.3 * sensor
    light = 2.0 + 1.5 * max(0.0, math.sin(phase - 1.0)) + 0.1 * sensor
    volt = 2.68 - 0.0001 * k
    return temp, hum, light, volt


def line(ts, epoch, sensor, temp, hum, light, volt):
    return (f"{ts:%Y-%m-%d} {ts:%H:%M:%S}.{sensor:05d} {epoch} {sensor} "
            f"{temp:.4f} {hum:.4f} {light:.4f} {volt:.5f}")


def main():
    rows = []
    for sensor in range(1, 6):
        for k in range(-6, 288):
            ts = START + timedelta(minutes=5 * k, seconds=7 * sensor)
            if sensor == 4 and 72 <= k < 84:  # outage 03:00-04:00
                continue
            temp, hum, light, volt = values(sensor, k)
            if sensor == 2 and 120 <= k < 123:  # window 40 loses every humidity value
                hum = 250.0
            if sensor == 3 and k == 150:
                hum = -3.0
            if sensor == 5 and k == 200:
                volt = 1.9
            rows.append((ts, line(ts, k + 100, sensor, temp, hum, light, volt)))
    for k in range(12):
        ts = datetime(2004, 2, 28, 10, 0) + timedelta(minutes=5 * k)
        rows.append((ts, line(ts, k, 6, *values(6, k))))
    rows.sort(key=lambda r: r[0])
    text = [r[1] for r in rows]
    text.insert(500, "2004-03-02 02:00:01.1 190 1 20.1 38.2 2.1")
    text.insert(900, "2004-03-02 09:00:02.2 250 3 abc 38.2 2.1 2.65")
    (OUT / "intel_readings.txt").write_text("\n".join(text) + "\n")

    probs = {}
    for i in range(1, 7):
        for j in range(1, 7):
            if i == j or {i, j} == {1, 5}:
                continue
            probs[(i, j)] = round(0.95 - 0.12 * abs(i - j) - (0.03 if i > j else 0.0), 2)
    conn = [f"{i} {j} {p}" for (i, j), p in sorted(probs.items())]
    conn.insert(0, "3 3 1.0")
    (OUT / "intel_connectivity.txt").write_text("\n".join(conn) + "\n")

    coords = [f"{i} {1.5 * i:.1f} {3.0 + (i % 2):.1f}" for i in range(1, 7)]
    (OUT / "intel_locs.txt").write_text("\n".join(coords) + "\n")


if __name__ == "__main__":
    main()
