import numpy as np
import pytest

from anchorlab.env import EnvConfig, generate_tree
from anchorlab.gradients import grad_log_prob
from anchorlab.objectives import MethodConfig, group_advantages
from anchorlab.policy import dump_logit_table, snapshot
from anchorlab.trainer import (
    TrainConfig,
    apply_token_batch,
    initial_policy,
    run_experiment,
    sample_group,
    train_step,
    write_steps_jsonl,
)

SMALL_ENV = EnvConfig(depth=3, branching=4, num_valid_leaves=4, seed=5)


def small_cfg(method="grpo", **overrides):
    base = dict(
        method_config=MethodConfig(method=method),
        env=SMALL_ENV,
        total_steps=5,
        groups_per_step=2,
        inner_epochs=2,
        eval_every=2,
        eval_samples_k=8,
        seed=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainStep:
    def test_first_pass_update_matches_ratio_one_formula(self):
        # With one inner epoch pi_theta stays equal to pi_old during the
        # pass, every push ratio is exactly 1, and the grpo update reduces
        # to token-mean advantage-weighted log-prob ascent.
        tree = generate_tree(SMALL_ENV)
        cfg = small_cfg(inner_epochs=1)
        policy = initial_policy(tree)
        rng = np.random.default_rng(12)
        stats = train_step(policy, tree, cfg, rng)
        assert stats.frac_clipped == 0.0

        expected = initial_policy(tree)
        pi_old = snapshot(expected)
        rng2 = np.random.default_rng(12)
        groups = [
            sample_group(tree, pi_old, cfg.method_config, rng2)
            for _ in range(cfg.groups_per_step)
        ]
        batch = []
        for g in groups:
            if g.skipped:
                continue
            for traj, adv in zip(g.trajectories, g.advantages):
                batch.extend(zip(traj.contexts, traj.tokens, [float(adv)] * tree.depth))
        grads = {}
        for ctx, token, adv in batch:
            dz = adv * grad_log_prob(pi_old.dist(ctx), token)
            grads[ctx] = grads.get(ctx, 0.0) + dz
        for ctx, g in grads.items():
            expected.add_to_logits(
                ctx, cfg.method_config.learning_rate * g / len(batch)
            )
        for ctx in expected.contexts():
            np.testing.assert_allclose(
                policy.logits(ctx), expected.logits(ctx), atol=1e-12
            )

    def test_all_valid_leaves_means_bitwise_no_op(self):
        # Every rollout earns reward 1: all groups are zero-variance and the
        # policy must come out byte-identical.
        env = EnvConfig(depth=2, branching=3, num_valid_leaves=9, seed=1)
        tree = generate_tree(env)
        cfg = small_cfg(env=env)
        policy = initial_policy(tree)
        before = dump_logit_table(policy)
        stats = train_step(policy, tree, cfg, np.random.default_rng(0))
        assert dump_logit_table(policy) == before
        assert stats.mean_reward == 1.0

    @pytest.mark.parametrize("method", ["grpo", "grpo_kl", "grpo_kl_error_only", "nsr", "apo"])
    def test_single_valid_leaf_probability_rises(self, method):
        env = EnvConfig(depth=2, branching=3, num_valid_leaves=1,
                        ref_concentration=1.0, ref_noise=0.3, seed=21)
        tree = generate_tree(env)
        (leaf,) = tree.valid_leaves

        def leaf_prob(policy):
            prob, ctx = 1.0, tree.ROOT
            for t in leaf:
                prob *= policy.dist(ctx)[t]
                ctx = tree.child_context(ctx, t)
            return prob

        gains = []
        for seed in range(10):
            cfg = small_cfg(method, env=env, total_steps=40, seed=seed)
            policy = initial_policy(tree)
            rng = np.random.default_rng(seed)
            start = leaf_prob(policy)
            for step in range(cfg.total_steps):
                train_step(policy, tree, cfg, rng, step)
            gains.append(leaf_prob(policy) - start)
        assert np.mean(gains) > 0

    def test_grpo_kl_step_equals_grpo_step_at_reference(self):
        # At pi_theta = pi_ref the KL gradient vanishes exactly, so one
        # single-epoch step is bitwise identical between the two methods.
        tree = generate_tree(SMALL_ENV)
        results = []
        for method in ("grpo", "grpo_kl"):
            cfg = small_cfg(method, inner_epochs=1)
            policy = initial_policy(tree)
            train_step(policy, tree, cfg, np.random.default_rng(7))
            results.append(dump_logit_table(policy))
        assert results[0] == results[1]

    def test_apo_degenerate_anchor_is_counted_not_fatal(self):
        env = EnvConfig(depth=2, branching=3, num_valid_leaves=1,
                        ref_concentration=2.0, ref_noise=0.2, seed=2)
        tree = generate_tree(env)
        cfg = small_cfg(
            "apo", env=env, total_steps=30,
            method_config=MethodConfig(method="apo", anchor_k=1),
        )
        policy = initial_policy(tree)
        rng = np.random.default_rng(4)
        total_degenerate = 0
        for step in range(cfg.total_steps):
            total_degenerate += train_step(policy, tree, cfg, rng, step).degenerate_anchors
        assert total_degenerate > 0


class TestTokenMeanAggregation:
    def test_replicated_batch_gives_identical_update(self):
        tree = generate_tree(SMALL_ENV)
        mcfg = MethodConfig(method="apo", anchor_k=3)
        pi_old = snapshot(initial_policy(tree))
        rng = np.random.default_rng(9)
        group = sample_group(tree, pi_old, mcfg, rng)
        batch = []
        for traj, adv in zip(group.trajectories, group.advantages):
            batch.extend(zip(traj.contexts, traj.tokens, [float(adv)] * tree.depth))

        once = initial_policy(tree)
        apply_token_batch(once, pi_old, tree, batch, mcfg)
        thrice = initial_policy(tree)
        apply_token_batch(thrice, pi_old, tree, batch * 3, mcfg)
        for ctx in once.contexts():
            np.testing.assert_allclose(
                once.logits(ctx), thrice.logits(ctx), rtol=0, atol=1e-12
            )


class TestRunExperiment:
    def test_zero_steps_gives_single_initial_record(self):
        cfg = small_cfg(total_steps=0)
        records, stats = run_experiment(cfg)
        assert len(records) == 1
        assert records[0].step == 0
        assert stats == []

    def test_determinism(self):
        cfg = small_cfg("apo", total_steps=4)
        a, _ = run_experiment(cfg)
        b, _ = run_experiment(cfg)
        assert a == b

    def test_eval_cadence(self):
        cfg = small_cfg(total_steps=5, eval_every=2)
        records, stats = run_experiment(cfg)
        assert [r.step for r in records] == [0, 2, 4, 5]
        assert len(stats) == 5

    def test_final_eval_not_duplicated(self):
        cfg = small_cfg(total_steps=4, eval_every=2)
        records, _ = run_experiment(cfg)
        assert [r.step for r in records] == [0, 2, 4]

    def test_jsonl_format(self, tmp_path):
        cfg = small_cfg(total_steps=2)
        _, stats = run_experiment(cfg)
        path = tmp_path / "steps.jsonl"
        write_steps_jsonl(stats, path)
        import json

        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert [l["step"] for l in lines] == [1, 2]
        assert set(lines[0]) == {
            "step", "mean_reward", "frac_clipped", "degenerate_anchors", "wallclock_ms"
        }
