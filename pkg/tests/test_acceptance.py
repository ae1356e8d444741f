"""Acceptance suite: pinned end-to-end checks over every subsystem.

Each test encodes one quantitative contract the package must meet:
analytic gradients against central finite differences, the FFT against
a literal DFT sum, hard-routing invariants, the load-balance law, loss
composition, the committed split table, training purity, the synthetic
cross-domain scaling trend, the ablation variants, few-shot adapters,
bit-level determinism of command outputs, and the F1 metric against an
independent oracle.  The five-seed scaling trend and the timed run at
the default profile dominate the suite's wall time (several minutes).
"""

import hashlib
import json
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from gradtools import gradcheck

from yotonet import cli, config, data, objective, protocol, seeds, signal
from yotonet import tensor, training
from yotonet.model import VARIANTS, ModelConfig, YotoNet
from yotonet.objective import LossWeights
from yotonet.tensor import Parameter, Tape, Tensor
from yotonet.training import AdapterConfig, TrainConfig

TOY_MODEL = dict(in_len=512, channels=4, d_model=8, n_experts=4, top_k=2,
                 expert_hidden=8, head_hidden=8, pool_stride=32)


def toy_model_cfg(**over) -> ModelConfig:
    return ModelConfig(**{**TOY_MODEL, **over})


def toy_train_cfg(**over) -> TrainConfig:
    base = dict(epochs=2, batch_size=16, learning_rate=1e-3, seed=0)
    return TrainConfig(**{**base, **over})


@pytest.fixture(scope="module")
def toy_dataset():
    return data.benchmark_domains(3, 512, 0)


@pytest.fixture(scope="module")
def default_profile_run():
    """One full 30-split run at the committed default profile, timed.

    Shared by the purity and wall-time checks so the expensive run
    happens once.  Timing includes data generation: it is the cost of
    reproducing the full benchmark from nothing but a seed.
    """
    run = config.default_run()
    synth = config.default_synth()
    start = time.perf_counter()
    dataset = data.benchmark_domains(synth.n_per_class, synth.window, run.seed)
    splits = protocol.enumerate_splits(run.domains)
    reports, failures = protocol.run_protocol(
        splits, run.model, run.train_config(), dataset, run.seed,
        record_failures=True,
    )
    return reports, failures, time.perf_counter() - start


# ---------------------------------------------------------------------------
# gradient checks: one factory per differentiable primitive.  topk_mask
# and routed_fractions are straight-through surrogates whose forward is
# intentionally non-differentiable; their selection behavior is pinned
# by the routing-invariant tests instead.


def away_from_zero(x, margin=0.05):
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < margin
    return np.where(small, x + np.sign(x + 0.5) * margin, x)


def _make_binary(op):
    def make(rng):
        a = Parameter(rng.normal(size=(3, 4)), "a")
        b = Parameter(rng.normal(size=(4,)), "b")
        return [a, b], lambda tape: tensor.sum_all(tape, op(tape, a, b))
    return make


def _make_scale(rng):
    x = Parameter(rng.normal(size=(2, 5)), "x")
    c = float(rng.normal()) + 0.1
    return [x], lambda tape: tensor.mean_all(tape, tensor.scale(tape, x, c))


def _make_matmul(rng):
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.normal(size=(4, 2)), "b")
    return [a, b], lambda tape: tensor.sum_all(tape, tensor.matmul(tape, a, b))


def _make_linear(rng):
    x = Parameter(rng.normal(size=(5, 3)), "x")
    w = Parameter(rng.normal(size=(3, 4)), "w")
    b = Parameter(rng.normal(size=(4,)), "b")
    return [x, w, b], lambda tape: tensor.mean_all(
        tape, tensor.linear(tape, x, w, b))


def _make_conv(rng):
    k = int(rng.choice([3, 5, 7]))
    dil = int(rng.choice([1, 2, 4]))
    x = Parameter(rng.normal(size=(2, 2, 12)), "x")
    kern = Parameter(rng.normal(size=(3, 2, k)), "k")
    probe = Tensor(rng.normal(size=(2, 3, 12)))
    return [x, kern], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.conv1d_dilated(tape, x, kern, dil), probe))


def _make_relu(rng):
    x = Parameter(away_from_zero(rng.normal(size=(3, 7))), "x")
    return [x], lambda tape: tensor.sum_all(tape, tensor.relu(tape, x))


def _make_sigmoid(rng):
    x = Parameter(rng.normal(size=(4, 3)), "x")
    probe = Tensor(rng.normal(size=(4, 3)))
    return [x], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.sigmoid(tape, x), probe))


def _make_softmax(rng):
    x = Parameter(rng.normal(size=(3, 5)), "x")
    probe = Tensor(rng.normal(size=(3, 5)))
    return [x], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.softmax(tape, x), probe))


def _make_pool_mean(rng):
    x = Parameter(rng.normal(size=(3, 5, 4)), "x")
    probe = Tensor(rng.normal(size=(3, 4)))
    return [x], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.pool_mean(tape, x), probe))


def _make_pool_attention(rng):
    x = Parameter(rng.normal(size=(2, 6, 3)), "x")
    w = Parameter(rng.normal(size=(3,)), "w")
    probe = Tensor(rng.normal(size=(2, 3)))
    return [x, w], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.pool_attention(tape, x, w), probe))


def _make_avg_pool(rng):
    x = Parameter(rng.normal(size=(2, 3, 12)), "x")
    return [x], lambda tape: tensor.mean_all(tape, tensor.avg_pool1d(tape, x, 4))


def _make_mean_axis(rng):
    x = Parameter(rng.normal(size=(3, 4, 5)), "x")
    axis = int(rng.integers(0, 3))
    return [x], lambda tape: tensor.sum_all(tape, tensor.mean_axis(tape, x, axis))


def _make_sum_all(rng):
    x = Parameter(rng.normal(size=(4, 3)), "x")
    return [x], lambda tape: tensor.sum_all(tape, x)


def _make_mean_all(rng):
    x = Parameter(rng.normal(size=(4, 3)), "x")
    return [x], lambda tape: tensor.mean_all(tape, x)


def _make_reshape(rng):
    x = Parameter(rng.normal(size=(2, 6)), "x")

    def build(tape):
        r = tensor.reshape(tape, x, (3, 4))
        return tensor.sum_all(tape, tensor.mul(tape, r, r))
    return [x], build


def _make_transpose(rng):
    x = Parameter(rng.normal(size=(3, 4)), "x")
    probe = Tensor(rng.normal(size=(4, 3)))
    return [x], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.transpose(tape, x, (1, 0)), probe))


def _make_concat(rng):
    a = Parameter(rng.normal(size=(2, 4)), "a")
    b = Parameter(rng.normal(size=(3, 4)), "b")

    def build(tape):
        cat = tensor.concat(tape, [a, b], axis=0)
        return tensor.sum_all(tape, tensor.mul(tape, cat, cat))
    return [a, b], build


def _make_take_rows(rng):
    x = Parameter(rng.normal(size=(5, 3)), "x")
    idx = rng.integers(0, 5, size=4)
    probe = Tensor(rng.normal(size=(4, 3)))
    return [x], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.take_rows(tape, x, idx), probe))


def _make_scatter_rows(rng):
    vals = Parameter(rng.normal(size=(3, 2)), "v")
    idx = rng.permutation(6)[:3]
    probe = Tensor(rng.normal(size=(6, 2)))
    return [vals], lambda tape: tensor.sum_all(
        tape, tensor.mul(tape, tensor.scatter_rows(tape, vals, idx, 6), probe))


def _make_select_column(rng):
    x = Parameter(rng.normal(size=(5, 4)), "x")
    col = int(rng.integers(0, 4))
    return [x], lambda tape: tensor.sum_all(
        tape, tensor.select_column(tape, x, col))


GRADCHECK_CASES = {
    "add": _make_binary(tensor.add),
    "sub": _make_binary(tensor.sub),
    "mul": _make_binary(tensor.mul),
    "scale": _make_scale,
    "matmul": _make_matmul,
    "linear": _make_linear,
    "conv1d_dilated": _make_conv,
    "relu": _make_relu,
    "sigmoid": _make_sigmoid,
    "softmax": _make_softmax,
    "pool_mean": _make_pool_mean,
    "pool_attention": _make_pool_attention,
    "avg_pool1d": _make_avg_pool,
    "mean_axis": _make_mean_axis,
    "sum_all": _make_sum_all,
    "mean_all": _make_mean_all,
    "reshape": _make_reshape,
    "transpose": _make_transpose,
    "concat": _make_concat,
    "take_rows": _make_take_rows,
    "scatter_rows": _make_scatter_rows,
    "select_column": _make_select_column,
}


class TestAutodiffGradients:
    def test_every_primitive_matches_finite_differences(self):
        start = time.perf_counter()
        for i, (name, make) in enumerate(GRADCHECK_CASES.items()):
            for case in range(20):
                params, build = make(np.random.default_rng([17, i, case]))
                gradcheck(build, params, rtol=1e-4)
        assert time.perf_counter() - start < 60.0


class TestSpectralTransform:
    POW2 = [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096]

    @staticmethod
    def naive_dft(x):
        """Literal X[k] = sum_j x[j] e^{-2 pi i j k / n}, chunked over k."""
        x = np.asarray(x, dtype=np.float64)
        n = len(x)
        j = np.arange(n)
        re = np.empty(n)
        im = np.empty(n)
        for start in range(0, n, 256):
            k = np.arange(start, min(start + 256, n))[:, None]
            ang = -2.0 * np.pi * k * j / n
            re[start : start + 256] = np.cos(ang) @ x
            im[start : start + 256] = np.sin(ang) @ x
        return re, im

    def test_fft_matches_naive_dft_for_all_sizes(self):
        rng = np.random.default_rng(7)
        for n in self.POW2:
            x = rng.normal(size=n)
            sp = signal.fft(x)
            re, im = self.naive_dft(x)
            scale = np.hypot(re, im).max()
            assert np.abs(sp.re - re).max() / scale < 1e-9, f"n={n}"
            assert np.abs(sp.im - im).max() / scale < 1e-9, f"n={n}"

    def test_parseval_identity(self):
        rng = np.random.default_rng(8)
        for n in self.POW2:
            x = rng.normal(size=n)
            sp = signal.fft(x)
            time_energy = float(np.sum(x * x))
            freq_energy = float(sp.power().sum()) / n
            assert abs(time_energy - freq_energy) / time_energy < 1e-9, f"n={n}"


class TestRoutingInvariants:
    def test_mask_probability_and_call_counts_over_1000_inputs(self):
        combos = [(4, 1), (4, 2), (6, 3), (8, 2)]
        rows_per = 250
        checked = 0
        for i, (n_experts, k) in enumerate(combos):
            cfg = toy_model_cfg(n_experts=n_experts, top_k=k)
            model = YotoNet(cfg, seed=31 + i)
            rng = np.random.default_rng(100 + i)
            z = rng.normal(size=(rows_per, cfg.d_model)) * 3.0
            tape = Tape()
            gate = model.route(tape, Tensor(z))
            probs, mask = gate.probs.data, gate.mask.data
            np.testing.assert_array_equal(mask.sum(axis=1), float(k))
            assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-12
            for r in range(rows_per):
                # independent oracle: explicit sort with index tie-break
                want = sorted(range(n_experts), key=lambda c: (-probs[r, c], c))[:k]
                np.testing.assert_array_equal(np.flatnonzero(mask[r]),
                                              np.sort(want))
            tokens = Tensor(rng.normal(size=(rows_per, 4, cfg.d_model)))
            model.moe_forward(tape, tokens, gate)
            assert model.last_expert_calls == rows_per * k
            checked += rows_per
        assert checked == 1000


class TestLoadBalanceLaw:
    def test_uniform_fractions_cost_exactly_zero(self):
        for n in (2, 4, 8, 16):
            f = Tensor(np.full(n, 1.0 / n))
            assert objective.load_balance_loss(Tape(), f, n, 0.01).item() == 0.0

    def test_two_expert_collapse_costs_exactly_half(self):
        loss = objective.load_balance_loss(Tape(), Tensor([1.0, 0.0]), 2, 1.0)
        assert loss.item() == 0.5

    def test_descent_on_balance_loss_alone_reduces_imbalance(self):
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            z = rng.normal(size=(64, 5))
            w = Parameter(rng.normal(size=(5, 4)), "w")
            w.data[:, 0] += 2.0  # start collapsed onto expert 0

            def fractions(tape):
                p = tensor.softmax(tape, tensor.matmul(tape, Tensor(z), w))
                mask = tensor.topk_mask(tape, p, 1)
                return tensor.routed_fractions(tape, p, mask, 1)

            def imbalance():
                f = fractions(Tape()).data
                return float(((f - 0.25) ** 2).sum())

            before = imbalance()
            for _ in range(100):
                tape = Tape()
                loss = objective.load_balance_loss(tape, fractions(tape), 4, 1.0)
                w.zero_grad()
                tensor.backward(tape, loss)
                w.data -= 0.5 * w.grad
            wins += imbalance() < before
        assert wins >= 19


class TestLossComposition:
    def test_every_logged_step_composes_to_1e_minus_12(self, toy_dataset):
        x = np.concatenate([toy_dataset["synthA"][0], toy_dataset["synthB"][0]])
        y = np.concatenate([toy_dataset["synthA"][1], toy_dataset["synthB"][1]])
        doms = ["synthA"] * 6 + ["synthB"] * 6
        w = LossWeights()
        model = YotoNet(toy_model_cfg(), seed=3)
        result = training.train(model, x, y, doms,
                                toy_train_cfg(epochs=3, batch_size=4))
        assert len(result.log) >= 9
        for _, _, rep in result.log:
            combined = rep.main + w.alpha * rep.aux + w.beta * rep.gate
            assert abs(rep.total - combined) <= 1e-12

    def test_gradient_linearity_against_three_backward_passes(self, toy_dataset):
        xb, yb = toy_dataset["synthA"][0][:6], toy_dataset["synthA"][1][:6]
        w = LossWeights()
        cfg = toy_model_cfg()
        model = YotoNet(cfg, seed=5)
        params = model.parameters()

        def losses(tape):
            out = model.forward(tape, xb)
            main = objective.cross_entropy(tape, out.main_logits, yb)
            aux = objective.cross_entropy(tape, out.aux_logits, yb)
            gate = objective.load_balance_loss(
                tape, out.gate.fractions, cfg.n_experts, w.lambda_bal)
            return main, aux, gate

        pieces = []
        for pick in range(3):
            for p in params:
                p.zero_grad()
            tape = Tape()
            tensor.backward(tape, losses(tape)[pick])
            pieces.append({p.name: p.grad.copy() for p in params})

        for p in params:
            p.zero_grad()
        tape = Tape()
        main, aux, gate = losses(tape)
        total, _ = objective.total_loss(tape, main, aux, gate, w)
        tensor.backward(tape, total)
        for p in params:
            combined = (pieces[0][p.name] + w.alpha * pieces[1][p.name]
                        + w.beta * pieces[2][p.name])
            np.testing.assert_allclose(p.grad, combined, atol=1e-12)


class TestSplitEnumeration:
    DATASETS = ("CWRU", "HUST", "MFPT", "OTTAWA", "XJTU")

    def test_thirty_splits_match_committed_table(self):
        splits = protocol.enumerate_splits(self.DATASETS)
        assert len(splits) == 30
        got = {(frozenset(s.train_domains), frozenset(s.test_domains))
               for s in splits}
        want = {(frozenset(tr), frozenset(te))
                for tr, te in protocol.REFERENCE_SPLITS}
        assert got == want

    def test_enumeration_is_order_insensitive(self):
        forward = protocol.enumerate_splits(self.DATASETS)
        backward = protocol.enumerate_splits(tuple(reversed(self.DATASETS)))
        assert {s.split_id for s in forward} == {s.split_id for s in backward}

    def test_task_sizes_are_5_10_10_5(self):
        counts = Counter(s.task for s in protocol.enumerate_splits(self.DATASETS))
        assert [counts[t] for t in (1, 2, 3, 4)] == [5, 10, 10, 5]


class TestTrainingPurity:
    def test_violation_counter_is_live(self, toy_dataset):
        x, y = toy_dataset["synthA"]
        model = YotoNet(toy_model_cfg(), seed=1)
        clean = training.train(model, x, y, ["synthA"] * len(y),
                               toy_train_cfg(epochs=1),
                               forbidden_domains={"synthB"})
        assert clean.purity_violations == 0
        model = YotoNet(toy_model_cfg(), seed=1)
        dirty = training.train(model, x, y, ["synthA"] * len(y),
                               toy_train_cfg(epochs=1),
                               forbidden_domains={"synthA"})
        assert dirty.purity_violations == len(y)

    def test_full_toy_protocol_run_records_zero_violations(self, toy_dataset):
        splits = protocol.enumerate_splits(tuple(toy_dataset))
        reports, failures = protocol.run_protocol(
            splits, toy_model_cfg(), toy_train_cfg(), toy_dataset, 0,
            record_failures=True)
        assert failures == {}
        assert len(reports) == 30

    def test_default_profile_run_is_clean(self, default_profile_run):
        reports, failures, _ = default_profile_run
        assert failures == {}
        assert len(reports) == 30
        for r in reports:
            assert not set(r.train_domains) & set(r.test_domains)


class TestScalingTrend:
    def test_mean_f1_rises_with_training_domains_over_five_seeds(self):
        fast = config.fast_run()
        synth = config.fast_synth()
        splits = protocol.enumerate_splits(fast.domains)
        per_task = {1: [], 2: [], 3: [], 4: []}
        for seed in range(5):
            dataset = data.benchmark_domains(synth.n_per_class, synth.window,
                                             seed)
            reports, failures = protocol.run_protocol(
                splits, fast.model, fast.train_config(), dataset, seed,
                record_failures=True)
            assert failures == {}
            means = protocol.task_means(reports)
            for task in per_task:
                per_task[task].append(means[task])
        means = {task: float(np.mean(vals)) for task, vals in per_task.items()}
        for task in (1, 2, 3):
            assert means[task + 1] >= means[task] - 0.02, means
        assert means[4] - means[1] >= 0.03, means

    def test_default_profile_full_run_fits_time_budget(self, default_profile_run):
        _, _, seconds = default_profile_run
        assert seconds < 1800.0


class TestAblationVariants:
    def test_all_six_variants_run_and_score(self, toy_dataset):
        split = [s for s in protocol.enumerate_splits(tuple(toy_dataset))
                 if s.task == 4 and s.test_domains == ("synthE",)][0]
        reports, summary = protocol.run_ablation(
            toy_model_cfg(), toy_train_cfg(), toy_dataset, 0, splits=[split])
        assert len(reports) == len(VARIANTS) == 6
        entry = summary[split.split_id]
        assert set(entry["scores"]) == set(VARIANTS)
        assert entry["best_variant"] in VARIANTS

    def test_no_balance_forward_is_bit_identical_to_full(self, toy_dataset):
        xb = toy_dataset["synthA"][0][:6]
        full = YotoNet(toy_model_cfg().with_ablation(VARIANTS["Full"]), seed=7)
        nobal = YotoNet(toy_model_cfg().with_ablation(VARIANTS["NoBalance"]),
                        seed=7)
        of = full.forward(Tape(), xb)
        ob = nobal.forward(Tape(), xb)
        np.testing.assert_array_equal(of.main_logits.data, ob.main_logits.data)
        np.testing.assert_array_equal(of.aux_logits.data, ob.aux_logits.data)

    def test_random_expert_keeps_probs_and_changes_mask(self, toy_dataset):
        xb = toy_dataset["synthA"][0][:6]
        xb = np.concatenate([xb] * 8)  # 48 rows: a collision is implausible
        full = YotoNet(toy_model_cfg(), seed=7)
        rand = YotoNet(toy_model_cfg().with_ablation(VARIANTS["RandomExpert"]),
                       seed=7)
        of = full.forward(Tape(), xb)
        orand = rand.forward(Tape(), xb, route_rng=np.random.default_rng(2))
        np.testing.assert_array_equal(of.gate.probs.data, orand.gate.probs.data)
        assert not np.array_equal(of.gate.mask.data, orand.gate.mask.data)
        np.testing.assert_array_equal(orand.gate.mask.data.sum(axis=1), 2.0)

    @pytest.mark.parametrize("variant", ["NoFFT", "NoDualAttn"])
    def test_structural_variants_change_outputs(self, toy_dataset, variant):
        xb = toy_dataset["synthA"][0][:6]
        full = YotoNet(toy_model_cfg(), seed=7)
        cut = YotoNet(toy_model_cfg().with_ablation(VARIANTS[variant]), seed=7)
        of = full.forward(Tape(), xb)
        oc = cut.forward(Tape(), xb)
        assert np.abs(of.main_logits.data - oc.main_logits.data).max() > 0.0


class TestFewShotAdapters:
    SOURCES = ("synthA", "synthB", "synthC", "synthD")

    def test_zero_initialized_adapters_reproduce_zero_shot_exactly(
            self, toy_dataset):
        xb = toy_dataset["synthC"][0][:8]
        model = YotoNet(toy_model_cfg(), seed=11)
        ref = model.forward(Tape(), xb).main_logits.data.copy()
        acfg = AdapterConfig(rank=4)
        model.attach_adapters(
            acfg.resolve_targets(model.config.n_experts), acfg.rank,
            acfg.scale, np.random.default_rng(0))
        after = model.forward(Tape(), xb).main_logits.data
        np.testing.assert_array_equal(after, ref)

    def test_256_shot_adaptation_wins_in_at_least_4_of_5_paired_seeds(self):
        wins = 0
        for seed in range(5):
            dataset = data.benchmark_domains(12, 512, seed)
            spec = data.DOMAIN_SPECS["synthE"]
            s = seeds.stream(seed, "data", "synthE-large", spec.seed)
            xt, yt, _ = data.synth_domain(spec, 160, window=512, seed=s)
            model = YotoNet(toy_model_cfg(), seed=seeds.stream(seed, "init"))
            xs = np.concatenate([dataset[n][0] for n in self.SOURCES])
            ys = np.concatenate([dataset[n][1] for n in self.SOURCES])
            doms = sum([[n] * len(dataset[n][1]) for n in self.SOURCES], [])
            training.train(model, xs, ys, doms,
                           toy_train_cfg(epochs=8,
                                         seed=seeds.stream(seed, "train")))
            acfg = toy_train_cfg(epochs=10, learning_rate=1e-2,
                                 seed=seeds.stream(seed, "adapt"))
            idx = training.select_shots(
                yt, 256, seeds.rng(acfg.seed, "shots", "synthE"))
            assert len(idx) == 256
            hold = np.setdiff1d(np.arange(len(yt)), idx)

            def holdout_f1(m):
                confusion, _ = training.evaluate(m, xt[hold], yt[hold],
                                                 route_seed=seed)
                return protocol.f1_scores(confusion)[1]

            before = holdout_f1(model)
            checksum = training.backbone_checksum(model)
            training.finetune_adapters(model, xt, yt, "synthE",
                                       AdapterConfig(rank=4, n_shots=256), acfg)
            assert training.backbone_checksum(model) == checksum
            wins += holdout_f1(model) >= before
        assert wins >= 4


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_cli")
    spec = config.default_synth()
    spec = type(spec)(window=512, n_per_class=3, domains=spec.domains)
    (root / "spec.json").write_text(spec.to_json())
    assert cli.main(["synth", "--spec", str(root / "spec.json"),
                     "--out", str(root / "data"), "--seed", "5"]) == 0
    doc = {"model": TOY_MODEL,
           "train": {"epochs": 2, "batch_size": 16, "learning_rate": 1e-3},
           "data_dir": str(root / "data"), "out_dir": str(root / "out"),
           "seed": 5}
    (root / "run.json").write_text(json.dumps(doc))
    return root


class TestDeterminism:
    @staticmethod
    def digest(path) -> str:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()

    def test_synth_rerun_is_bit_identical(self, cli_workspace, capsys):
        again = cli_workspace / "data_again"
        assert cli.main(["synth", "--spec", str(cli_workspace / "spec.json"),
                         "--out", str(again), "--seed", "5"]) == 0
        capsys.readouterr()
        for f in sorted(p.name for p in (cli_workspace / "data").iterdir()):
            assert self.digest(cli_workspace / "data" / f) == self.digest(
                again / f), f

    def test_train_rerun_is_bit_identical(self, cli_workspace, capsys):
        outs = [cli_workspace / "train_a", cli_workspace / "train_b"]
        for out in outs:
            assert cli.main(["train", "--config",
                             str(cli_workspace / "run.json"),
                             "--out", str(out)]) == 0
        capsys.readouterr()
        for name in ("model.ckpt", "train_log.csv"):
            assert self.digest(outs[0] / name) == self.digest(outs[1] / name)

    def test_protocol_rerun_is_bit_identical(self, cli_workspace, capsys):
        outs = [cli_workspace / "proto_a", cli_workspace / "proto_b"]
        for out in outs:
            assert cli.main(["protocol", "--config",
                             str(cli_workspace / "run.json"),
                             "--splits", "task1-synthA", "--out", str(out)]) == 0
        capsys.readouterr()
        for name in ("reports.csv", "summary.json"):
            assert self.digest(outs[0] / name) == self.digest(outs[1] / name)


class TestF1Metric:
    @staticmethod
    def oracle_f1(confusion):
        """Precision/recall composition, written independently."""
        confusion = np.asarray(confusion, dtype=np.float64)
        n = confusion.shape[0]
        per = np.zeros(n)
        for c in range(n):
            tp = confusion[c, c]
            fp = confusion[:, c].sum() - tp
            fn = confusion[c, :].sum() - tp
            precision = tp / (tp + fp) if tp + fp > 0 else 0.0
            recall = tp / (tp + fn) if tp + fn > 0 else 0.0
            per[c] = (2 * precision * recall / (precision + recall)
                      if precision + recall > 0 else 0.0)
        support = confusion.sum(axis=1)
        total = support.sum()
        avg = float((support * per).sum() / total) if total > 0 else 0.0
        return per, avg

    def test_matches_oracle_on_1000_random_confusions(self):
        rng = np.random.default_rng(12)
        for trial in range(1000):
            n = int(rng.integers(2, 6))
            confusion = rng.integers(0, 20, size=(n, n))
            if trial % 5 == 0:
                confusion[rng.integers(0, n)] = 0  # a class with no support
            if trial % 7 == 0:
                confusion[:, rng.integers(0, n)] = 0  # never predicted
            per, avg = protocol.f1_scores(confusion)
            oper, oavg = self.oracle_f1(confusion)
            assert np.abs(per - oper).max() <= 1e-12
            assert abs(avg - oavg) <= 1e-12

    def test_zero_over_zero_scores_zero(self):
        per, avg = protocol.f1_scores(np.zeros((3, 3), dtype=int))
        np.testing.assert_array_equal(per, 0.0)
        assert avg == 0.0
