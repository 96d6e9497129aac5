import numpy as np
import pytest
from hypothesis import settings

from tapmap.gridmap import MATERIALS, CellState, GroundTruthWorld, OccupancyGrid, Pose

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def boxed_world(h, w, thick=3, code=6, res=0.05):
    m = np.full((h, w), -1, dtype=np.int8)
    m[:thick], m[-thick:], m[:, :thick], m[:, -thick:] = code, code, code, code
    return GroundTruthWorld(m, res)


def random_room(seed, size=(80, 80), n_boxes=3, gap=12, thick=3):
    """Walled room with well separated rectangular obstacles of random materials.

    Obstacles keep ``gap`` cells from the walls and from each other so free
    space stays connected for a 0.2 m robot. Returns the world and a free
    start pose.
    """
    rng = np.random.default_rng(seed)
    h, w = size
    mats = np.full((h, w), -1, dtype=np.int8)
    mats[:thick], mats[-thick:], mats[:, :thick], mats[:, -thick:] = 6, 6, 6, 6
    taken = np.zeros((h, w), dtype=bool)
    taken[:thick + gap], taken[-thick - gap:], taken[:, :thick + gap], taken[:, -thick - gap:] = (
        True, True, True, True)
    placed = 0
    for _ in range(200):
        if placed == n_boxes:
            break
        bh, bw = rng.integers(6, 18, size=2)
        r, c = rng.integers(0, h - bh), rng.integers(0, w - bw)
        if taken[r:r + bh, c:c + bw].any():
            continue
        mats[r:r + bh, c:c + bw] = rng.choice([int(m) for m in MATERIALS])
        taken[max(r - gap, 0):r + bh + gap, max(c - gap, 0):c + bw + gap] = True
        placed += 1
    world = GroundTruthWorld(mats, 0.05, name=f"room{seed}")
    return world, Pose((thick + 4.5) * 0.05, (thick + 4.5) * 0.05, 0.0)


def random_grid(rng, shape=(64, 64), p_occ=0.3, p_unknown=0.2):
    u = rng.random(shape)
    cells = np.where(u < p_occ, CellState.OCCUPIED,
                     np.where(u < p_occ + p_unknown, CellState.UNKNOWN, CellState.FREE))
    return OccupancyGrid(cells.astype(np.int8))


def jitter_biases(model, rng, scale=0.1):
    """Zero biases leave pre-activations at exactly 0 wherever a window sees only
    dead or padded inputs, and ReLU has no derivative there. Move off that point."""
    for name, p in model.params.items():
        if name.endswith("_b"):
            p += scale * rng.standard_normal(p.shape)


def fd_gradient_check(model, X, y, h=1e-4, smallest=1e-8):
    """Worst relative error between analytic and central-difference gradients.

    A central difference is only a derivative if no ReLU switches between the
    two probe points. Where the activation pattern at ``theta +- h`` differs
    from the one at ``theta``, the step is cut tenfold until it does not.
    Returns ``(worst, n_rechecked, n_params)``.
    """
    from tapmap.classifier import forward_batch, loss_and_grads

    def probe():
        logits, cache = forward_batch(model, X, keep_cache=True)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return -logp[np.arange(len(y)), y].mean(), [c[2] for c in cache[:-1]]

    base_loss, grads = loss_and_grads(model, X, y)
    loss0, masks0 = probe()
    assert abs(loss0 - base_loss) <= 1e-12 * max(1.0, abs(base_loss))

    worst, rechecked, total = 0.0, 0, 0
    for name, p in model.params.items():
        for idx in np.ndindex(p.shape):
            total += 1
            keep = p[idx]
            step = h
            while True:
                p[idx] = keep + step
                up, m_up = probe()
                p[idx] = keep - step
                down, m_down = probe()
                p[idx] = keep
                same = all(np.array_equal(a, b) and np.array_equal(a, c)
                           for a, b, c in zip(masks0, m_up, m_down))
                if same or step <= smallest:
                    break
                step /= 10
            rechecked += step != h
            num = (up - down) / (2 * step)
            ana = grads[name][idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
    return worst, rechecked, total


VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and print it."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
