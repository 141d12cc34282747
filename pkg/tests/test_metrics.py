import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from garb import flatshop, metrics
from garb.errors import ContractError


def _rand_img(seed, size=32):
    return np.random.default_rng(seed).random((size, size))


# --- independent oracles ---------------------------------------------------


def oracle_ssim(x, y, window=11, sigma=1.5, L=1.0):
    """Sliding-window SSIM written independently of the convolution path."""
    r = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    wx = sliding_window_view(x, (window, window))
    wy = sliding_window_view(y, (window, window))
    mu_x = np.einsum("ijkl,kl->ij", wx, w)
    mu_y = np.einsum("ijkl,kl->ij", wy, w)
    var_x = np.einsum("ijkl,kl->ij", wx * wx, w) - mu_x ** 2
    var_y = np.einsum("ijkl,kl->ij", wy * wy, w) - mu_y ** 2
    cov = np.einsum("ijkl,kl->ij", wx * wy, w) - mu_x * mu_y
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    val = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)
           / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)))
    return float(val.mean())


def oracle_cs(x, y, window=11, sigma=1.5, L=1.0):
    r = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    wx = sliding_window_view(x, (window, window))
    wy = sliding_window_view(y, (window, window))
    mu_x = np.einsum("ijkl,kl->ij", wx, w)
    mu_y = np.einsum("ijkl,kl->ij", wy, w)
    var_x = np.einsum("ijkl,kl->ij", wx * wx, w) - mu_x ** 2
    var_y = np.einsum("ijkl,kl->ij", wy * wy, w) - mu_y ** 2
    cov = np.einsum("ijkl,kl->ij", wx * wy, w) - mu_x * mu_y
    c2 = (0.03 * L) ** 2
    return float(np.mean((2 * cov + c2) / (var_x + var_y + c2)))


def oracle_ms_ssim(x, y, weights, window=11, sigma=1.5):
    w = np.asarray(weights) / np.sum(weights)
    value = 1.0
    for j in range(len(w)):
        if j == len(w) - 1:
            term = oracle_ssim(x, y, window, sigma)
        else:
            term = oracle_cs(x, y, window, sigma)
            x = (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])[
                : x.shape[0] // 2, : x.shape[1] // 2] / 4.0
            y = (y[0::2, 0::2] + y[1::2, 0::2] + y[0::2, 1::2] + y[1::2, 1::2])[
                : y.shape[0] // 2, : y.shape[1] // 2] / 4.0
        value *= max(term, 0.0) ** w[j]
    return value


class TestSSIM:
    def test_identity_exact(self):
        x = _rand_img(0)
        assert metrics.ssim(x, x) == 1.0

    def test_constants_closed_form(self):
        x = np.zeros((32, 32))
        y = np.ones((32, 32))
        c1 = 0.01 ** 2
        expected = c1 / (1 + c1)
        assert metrics.ssim(x, y) == pytest.approx(expected, abs=1e-8)
        assert expected == pytest.approx(9.999e-5, abs=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_independent_oracle(self, seed):
        x, y = _rand_img(seed), _rand_img(seed + 100)
        assert metrics.ssim(x, y) == pytest.approx(oracle_ssim(x, y), abs=1e-6)

    def test_symmetry(self):
        x, y = _rand_img(1), _rand_img(2)
        assert metrics.ssim(x, y) == pytest.approx(metrics.ssim(y, x), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ContractError):
            metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestMSSSIM:
    def test_identity(self):
        x = _rand_img(3, 64)
        assert metrics.ms_ssim(x, x) == 1.0

    def test_weights_renormalized_on_scale_reduction(self):
        # 64px supports 3 of the 5 default scales with an 11px window
        x, y = _rand_img(4, 64), _rand_img(5, 64)
        got = metrics.ms_ssim(x, y)
        expected = oracle_ms_ssim(x, y, metrics.MS_SSIM_WEIGHTS[:3])
        assert got == pytest.approx(expected, abs=1e-6)

    def test_oracle_match_64(self):
        x, y = _rand_img(6, 64), _rand_img(7, 64)
        n_scales = 3
        assert metrics.ms_ssim(x, y) == pytest.approx(
            oracle_ms_ssim(x, y, metrics.MS_SSIM_WEIGHTS[:n_scales]), abs=1e-6)

    def test_symmetry(self):
        x, y = _rand_img(8, 64), _rand_img(9, 64)
        assert metrics.ms_ssim(x, y) == pytest.approx(metrics.ms_ssim(y, x), abs=1e-12)


class TestCWSSIM:
    def test_identity(self):
        x = _rand_img(10, 32)
        assert metrics.cw_ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_single_band_brute_force(self):
        x, y = _rand_img(11, 8), _rand_img(12, 8)
        k = metrics.gabor_kernel(0, 1, size=5)
        # direct nested-loop valid convolution
        out_x = np.zeros((4, 4), dtype=complex)
        out_y = np.zeros((4, 4), dtype=complex)
        kf = k[::-1, ::-1]  # convolution flips the kernel
        for i in range(4):
            for j in range(4):
                out_x[i, j] = np.sum(x[i:i + 5, j:j + 5] * kf)
                out_y[i, j] = np.sum(y[i:i + 5, j:j + 5] * kf)
        K = 0.01
        cross = np.abs(np.sum(out_x * np.conj(out_y)))
        energy = np.sum(np.abs(out_x) ** 2) + np.sum(np.abs(out_y) ** 2)
        expected = (2 * cross + K) / (energy + K)
        got = metrics.cw_ssim(x, y, levels=1, orientations=1, K=K, kernel_size=5)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_translation_tolerance_vs_ssim(self):
        # smooth image, one-pixel shift: CW-SSIM should degrade less
        yy, xx = np.mgrid[0:64, 0:64]
        wins = 0
        for cx, cy in [(30, 30), (25, 35), (35, 25), (28, 40), (40, 28)]:
            img = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 120.0)
            shifted = np.roll(img, 1, axis=1)
            if metrics.cw_ssim(img, shifted) > metrics.ssim(img, shifted):
                wins += 1
        assert wins >= 4

    def test_too_small_for_pyramid(self):
        with pytest.raises(ContractError):
            metrics.cw_ssim(np.zeros((8, 8)), np.zeros((8, 8)), levels=3)


class TestDISTS:
    def test_identity_zero(self):
        img = (np.random.default_rng(0).random((32, 32, 3)) * 255).astype(np.uint8)
        assert metrics.dists(img, img, metrics.IdentityExtractor()) == 0.0

    def test_equal_constants_zero(self):
        x = np.full((8, 8, 3), 0.2)
        assert metrics.dists(x, x.copy(), metrics.IdentityExtractor(1)) == 0.0

    def test_documented_4x4_pair(self):
        x = np.arange(16, dtype=np.float64).reshape(4, 4)[..., None].repeat(3, -1) / 16
        y = (x * 0.5 + 0.1)
        got = metrics.dists(x, y, metrics.IdentityExtractor(1), 0.5, 0.5)
        # closed-form statistics oracle, computed per channel
        c = 1e-6
        terms = []
        for ch in range(3):
            mx, my = x[..., ch], y[..., ch]
            mux, muy = mx.mean(), my.mean()
            vx = ((mx - mux) ** 2).mean()
            vy = ((my - muy) ** 2).mean()
            cov = ((mx - mux) * (my - muy)).mean()
            texture = (2 * mux * muy + c) / (mux ** 2 + muy ** 2 + c)
            structure = (2 * cov + c) / (vx + vy + c)
            terms.append(0.5 * texture + 0.5 * structure)
        assert got == pytest.approx(1.0 - np.mean(terms), abs=1e-12)

    def test_weight_contract(self):
        x = np.zeros((8, 8, 3))
        with pytest.raises(ContractError):
            metrics.dists(x, x, metrics.IdentityExtractor(1), 0.7, 0.5)


class TestFID:
    def test_identity_zero(self):
        imgs = [(np.random.default_rng(i).random((32, 32, 3)) * 255).astype(np.uint8)
                for i in range(4)]
        s = metrics.feature_stats(imgs, metrics.IdentityExtractor())
        assert metrics.fid(s, s) == pytest.approx(0.0, abs=1e-9)

    def test_mean_shift_closed_form(self):
        a = metrics.FeatureStats(np.array([0.0, 0.0]), np.eye(2), 10)
        b = metrics.FeatureStats(np.array([3.0, 4.0]), np.eye(2), 10)
        assert metrics.fid(a, b) == pytest.approx(25.0, abs=1e-6)

    def test_covariance_closed_form(self):
        a = metrics.FeatureStats(np.zeros(2), 4.0 * np.eye(2), 10)
        b = metrics.FeatureStats(np.zeros(2), np.eye(2), 10)
        assert metrics.fid(a, b) == pytest.approx(2.0, abs=1e-6)

    def test_symmetry_and_nonnegative(self):
        rng = np.random.default_rng(0)
        fa = rng.normal(size=(20, 4))
        fb = rng.normal(loc=0.5, size=(20, 4))

        def stats(f):
            mu = f.mean(0)
            s = np.cov(f, rowvar=False, ddof=1)
            return metrics.FeatureStats(mu, (s + s.T) / 2, len(f))

        assert metrics.fid(stats(fa), stats(fb)) == pytest.approx(
            metrics.fid(stats(fb), stats(fa)), abs=1e-9)
        assert metrics.fid(stats(fa), stats(fb)) >= 0.0

    def test_rotation_invariance(self):
        rng = np.random.default_rng(1)
        fa = rng.normal(size=(50, 5))
        fb = rng.normal(loc=0.3, size=(50, 5))
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))

        def stats(f):
            mu = f.mean(0)
            s = np.cov(f, rowvar=False, ddof=1)
            return metrics.FeatureStats(mu, (s + s.T) / 2, len(f))

        base = metrics.fid(stats(fa), stats(fb))
        rotated = metrics.fid(stats(fa @ q), stats(fb @ q))
        assert rotated == pytest.approx(base, abs=1e-6)


class TestKID:
    def test_identical_constant_sets_exact_zero(self):
        f = np.ones((5, 3))
        assert metrics.kid(f, f.copy()) == 0.0

    def test_one_sample_rejected(self):
        with pytest.raises(ContractError):
            metrics.kid(np.ones((1, 3)), np.ones((5, 3)))

    def test_same_distribution_unbiased(self):
        rng = np.random.default_rng(42)
        values = []
        for _ in range(100):
            fa = rng.normal(size=(50, 4))
            fb = rng.normal(size=(50, 4))
            values.append(metrics.kid(fa, fb))
        mean = np.mean(values)
        se = np.std(values, ddof=1) / np.sqrt(len(values))
        assert abs(mean) <= 3 * se

    def test_blocked_estimate(self):
        rng = np.random.default_rng(3)
        fa, fb = rng.normal(size=(40, 4)), rng.normal(size=(40, 4))
        assert np.isfinite(metrics.kid(fa, fb, block_size=10))


class TestEvaluatePairs:
    def _dirs(self, tmp_path, identical=True):
        pred, ref = tmp_path / "pred", tmp_path / "ref"
        pred.mkdir(), ref.mkdir()
        for i in range(4):
            img = (np.random.default_rng(i).random((32, 32, 3)) * 255).astype(np.uint8)
            flatshop.save_png(img, str(ref / f"{i}.png"))
            if identical:
                flatshop.save_png(img, str(pred / f"{i}.png"))
            else:
                other = (np.random.default_rng(i + 50).random((32, 32, 3)) * 255
                         ).astype(np.uint8)
                flatshop.save_png(other, str(pred / f"{i}.png"))
        return str(pred), str(ref)

    def test_identity_suite(self, tmp_path):
        pred, ref = self._dirs(tmp_path)
        cfg = metrics.MetricConfig(cw_levels=1)
        report = metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor(), cfg)
        assert report.aggregate["ssim"] == 1.0
        assert report.aggregate["ms_ssim"] == 1.0
        assert report.aggregate["cw_ssim"] == pytest.approx(1.0, abs=1e-12)
        assert report.aggregate["dists"] == 0.0
        assert report.aggregate["fid"] == pytest.approx(0.0, abs=1e-9)
        # unbiased estimator: small negative bias on identical finite sets
        assert abs(report.aggregate["kid"]) < 0.05

    def test_rerun_identical(self, tmp_path):
        pred, ref = self._dirs(tmp_path, identical=False)
        cfg = metrics.MetricConfig(cw_levels=1)
        a = metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor(), cfg)
        b = metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor(), cfg)
        assert a.per_pair == b.per_pair and a.aggregate == b.aggregate

    def test_mismatched_sets_listed(self, tmp_path):
        pred, ref = self._dirs(tmp_path)
        extra = (np.zeros((32, 32, 3))).astype(np.uint8)
        flatshop.save_png(extra, str(tmp_path / "pred" / "zz.png"))
        with pytest.raises(ContractError, match="zz.png"):
            metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor())

    def test_csv_format(self, tmp_path):
        pred, ref = self._dirs(tmp_path)
        cfg = metrics.MetricConfig(cw_levels=1)
        report = metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor(), cfg)
        path = tmp_path / "report.csv"
        metrics.write_report_csv(report, str(path))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "pair_id,ssim,ms_ssim,cw_ssim,dists"
        assert len(lines) == 1 + report.n_pairs + 2
        assert lines[-2].startswith("fid,") and lines[-1].startswith("kid,")
        assert lines[1].split(",")[1] == "1.000000"

    def test_extractor_swap_changes_only_distribution_metrics(self, tmp_path):
        pred, ref = self._dirs(tmp_path, identical=False)
        cfg = metrics.MetricConfig(cw_levels=1)
        a = metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor(2, 8), cfg)
        b = metrics.evaluate_pairs(pred, ref, metrics.IdentityExtractor(3, 4), cfg)
        assert a.aggregate["ssim"] == b.aggregate["ssim"]
        assert a.aggregate["ms_ssim"] == b.aggregate["ms_ssim"]
        assert a.aggregate["cw_ssim"] == b.aggregate["cw_ssim"]
        assert a.aggregate["fid"] != b.aggregate["fid"]
