import itertools

import numpy as np
import pytest
from sklearn.base import clone

from bada.behavior import (
    BehaviorEmbedding,
    EmbeddingBatch,
    StepRecord,
    Trajectory,
    embed_batch,
    embed_trajectory,
)
from bada.envs import GridEnv, make_scenario
from bada.exceptions import ConfigError


def make_traj(rng, H=5, obs_dim=6, n_actions=4):
    return Trajectory(
        rng.normal(size=(H, obs_dim)),
        rng.integers(n_actions, size=H),
        rng.normal(size=H),
        -rng.random(H),
        [False] * (H - 1) + [True],
    )


@pytest.fixture
def emb():
    return BehaviorEmbedding(random_state=3).fit(obs_dim=6)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((0, 2)), [], [], [])
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 2)), [0], [0.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 2)), [0, 1], [0, 0], [-0.1, -0.1], [True, False])
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 2)), [0], [0], [0.5])


def test_step_records_round_trip(rng):
    t = make_traj(rng)
    again = Trajectory.from_steps(t.steps)
    assert np.array_equal(again.states, t.states)
    assert np.array_equal(again.actions, t.actions)
    assert isinstance(t.steps[0], StepRecord)
    assert t.total_reward == pytest.approx(t.rewards.sum())


def test_embedding_is_deterministic(emb, rng):
    t = make_traj(rng)
    assert np.array_equal(embed_trajectory(t, emb), embed_trajectory(t, emb))
    other = BehaviorEmbedding(random_state=3).fit(obs_dim=6)
    assert np.array_equal(embed_trajectory(t, emb), embed_trajectory(t, other))


def test_zero_features_map_to_constant():
    emb = BehaviorEmbedding(include_action=False, random_state=0).fit(obs_dim=3)
    for b in emb.biases_:
        b[:] = 0.0
    t1 = Trajectory(np.zeros((4, 3)), [0, 1, 2, 3], np.zeros(4), np.full(4, -1.0))
    t2 = Trajectory(np.zeros((2, 3)), [3, 3], np.zeros(2), np.full(2, -0.5))
    z1, z2 = embed_trajectory(t1, emb), embed_trajectory(t2, emb)
    assert np.array_equal(z1, np.zeros(emb.latent_dim))
    assert np.array_equal(z1, z2)


def test_step_order_does_not_matter(emb, rng):
    t = make_traj(rng, H=4)
    base = embed_trajectory(t, emb)
    for order in itertools.permutations(range(4)):
        assert np.allclose(embed_trajectory(t.permuted(order), emb), base, atol=1e-12)


def test_identical_trajectories_give_point_mass(emb, rng):
    t = make_traj(rng)
    batch = embed_batch([t] * 5, emb)
    assert len(batch) == 5 and batch.dim == emb.latent_dim
    assert np.all(batch.points == batch.points[0])
    assert len(embed_batch([t], emb)) == 1


def test_empty_batch_and_bad_dims(emb, rng):
    with pytest.raises(ValueError):
        emb.transform([])
    with pytest.raises(ConfigError):
        emb.transform([make_traj(rng, obs_dim=7)])
    with pytest.raises(ConfigError):
        BehaviorEmbedding(latent_dim=1).fit(obs_dim=3)


def _rollouts(spec, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        env = GridEnv(spec, seed=seed * 100 + k)
        s = env.reset()
        S, A, R = [], [], []
        done = False
        while not done:
            a = int(rng.integers(4))
            S.append(s)
            A.append(a)
            s, r, done = env.step(a)
            R.append(r)
        out.append(Trajectory(S, A, R, np.full(len(A), np.log(0.25))))
    return out


def test_two_environments_form_separate_clusters():
    base, sched = make_scenario("shift-grid", [1], magnitude=1.0)
    shifted = sched.changes[0][1]
    emb = BehaviorEmbedding(random_state=0).fit(obs_dim=base.obs_dim)
    a = emb.transform(_rollouts(base, 12, 1))
    b = emb.transform(_rollouts(shifted, 12, 2))
    intra = max(np.linalg.norm(a - a.mean(0), axis=1).max(), np.linalg.norm(b - b.mean(0), axis=1).max())
    inter = np.linalg.norm(a[:, None] - b[None], axis=-1).min()
    assert inter > intra


def test_sklearn_protocol(emb, rng):
    params = emb.get_params()
    assert params["latent_dim"] == 8 and params["random_state"] == 3
    fresh = clone(emb)
    assert not hasattr(fresh, "weights_")
    trajs = [make_traj(rng) for _ in range(3)]
    Z = BehaviorEmbedding(random_state=1).fit_transform(trajs)
    assert Z.shape == (3, 8)


def test_output_scale_scales_distances(rng):
    trajs = [make_traj(rng) for _ in range(4)]
    z1 = BehaviorEmbedding(random_state=2).fit(obs_dim=6).transform(trajs)
    z3 = BehaviorEmbedding(random_state=2, output_scale=3.0).fit(obs_dim=6).transform(trajs)
    assert np.allclose(z3, 3.0 * z1)


def test_json_round_trip(emb, rng, tmp_path):
    path = tmp_path / "map.json"
    emb.to_json(str(path))
    loaded = BehaviorEmbedding.from_json(str(path))
    t = make_traj(rng)
    assert np.array_equal(embed_trajectory(t, loaded), embed_trajectory(t, emb))
    assert BehaviorEmbedding.from_json(emb.to_json()).get_params() == emb.get_params()


def test_embedding_batch_validates():
    b = EmbeddingBatch([1.0, 2.0, 3.0], epoch_index=4)
    assert b.points.shape == (3, 1) and b.epoch_index == 4
    with pytest.raises(ValueError):
        EmbeddingBatch(np.zeros((0, 2)))
