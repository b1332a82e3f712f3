"""Smoke test for the dlgfa_py extension module.

Build and install first:

    pip install --no-build-isolation ./crates/python
"""

import math
import os
import tempfile

import dlgfa_py as d


def main():
    assert abs(d.kl_diag_gaussian([1.0], [1.0], [0.0], [1.0]) - 0.5) < 1e-12
    assert abs(d.logpdf_diag_gaussian([0.0], [0.0], [1.0]) + 0.5 * math.log(2 * math.pi)) < 1e-12
    shrunk = d.prox_group_columns([[3.0], [4.0]], 2.0)
    assert all(abs(r[0] - e) < 1e-15 for r, e in zip(shrunk, [1.8, 2.4]))
    assert d.prox_group_columns([[0.3], [0.4]], 1.0) == [[0.0], [0.0]]

    ds = d.generate_one_bar(100, size=4, noise_sd=0.05, seed=1)
    assert (len(ds), ds.timesteps, ds.dim) == (100, 4, 16)
    train, val, test = ds.split(seed=0)
    assert (len(train), len(val), len(test)) == (80, 10, 10)

    model, history = d.fit(train, latent_dim=4, hidden_dim=8, feature_dim=8, lambda_=1.0, batch_size=16, max_epochs=3)
    assert len(history) == 3 and history[-1]["epoch"] == 3
    mse = model.mse(test)
    assert math.isfinite(mse)

    report = model.sparsity_report()
    assert report.column_count == 4 * 4 * 4
    assert len(report.heatmap(1)) == 4
    assert len(report.top_groups(4, top_k=2)) == 4

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        again = d.Model.load(path)
        assert again.loading(0, 0) == model.loading(0, 0)
        csv = os.path.join(tmp, "data.csv")
        test.save_csv(csv)
        assert d.load_wide_csv(csv).values() == test.values()

    try:
        d.generate_one_bar(10, mode="diagonal")
    except ValueError:
        pass
    else:
        raise AssertionError("bad mode accepted")

    print(f"ok: mse {mse:.4f}, zero columns {report.zero_count}/{report.column_count}")


if __name__ == "__main__":
    main()
