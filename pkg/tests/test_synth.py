import numpy as np
import pytest

from agepredict.domain import ModelSpec
from agepredict.featurize import apply_preprocessing, build_dataset, build_index, build_vocabulary, impute_missing
from agepredict.ingest import FixtureAnnotationClient, enrich_popular, extract_age, load_fixture, load_users
from agepredict.models import fit_ols, predict
from agepredict.selection import SplitPlan, split, train_with_preprocessing
from agepredict.evaluate import mae
from agepredict.synth import GeneratorParams, generate_cohort, solve_age_distribution, write_cohort

from conftest import make_dataset


def test_age_moments_at_n_10000():
    cohort = generate_cohort(10000, 2024)
    ages = np.array([u.extracted_age for u in cohort.users], dtype=float)
    assert abs(ages.mean() - 23.77) <= 0.5
    assert abs(ages.std() - 12.58) <= 0.8
    assert ages.min() >= 10 and ages.max() <= 99


def test_solved_distribution_hits_targets_exactly():
    mu, sigma, pmf = solve_age_distribution(GeneratorParams())
    ages = np.arange(10, 100)
    mean = pmf @ ages
    assert mean == pytest.approx(23.77, abs=1e-6)
    assert np.sqrt(pmf @ (ages - mean) ** 2) == pytest.approx(12.58, abs=1e-6)
    # right skew
    assert ages[np.argmax(pmf)] < mean


def test_same_seed_byte_identical(tmp_path):
    a = write_cohort(generate_cohort(300, 7), tmp_path / "a")
    b = write_cohort(generate_cohort(300, 7), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    c = write_cohort(generate_cohort(300, 8), tmp_path / "c")
    assert a["users"].read_bytes() != c["users"].read_bytes()


def _raw_dataset(cohort):
    vocab = build_vocabulary(cohort.index)
    return build_dataset(cohort.users, cohort.index, vocab), vocab


def test_zero_noise_linear_signal_recovered_by_ols():
    cohort = generate_cohort(1500, 3, GeneratorParams(noise_std=0.0))
    ds, vocab = _raw_dataset(cohort)
    ds = impute_missing(ds, "mean")
    m = fit_ols(ds)
    planted = cohort.metadata["planted_function"]
    expected = np.zeros(ds.n_cols)
    for uri, w in planted["type_weights"].items():
        expected[ds.column_index(uri)] = w
    assert m.coefficients == pytest.approx(expected, abs=1e-3)
    assert m.intercept == pytest.approx(planted["intercept"], abs=1e-3)


def test_zero_noise_quadratic_signal_recovered_with_square_term():
    cohort = generate_cohort(1500, 4, GeneratorParams(noise_std=0.0, nonlinearity="quadratic"))
    ds, _ = _raw_dataset(cohort)
    ds = impute_missing(ds, "mean")
    q = cohort.metadata["planted_function"]["quadratic"]
    diff = ds.matrix[:, ds.column_index(q["type_a"])] - ds.matrix[:, ds.column_index(q["type_b"])]
    X = np.column_stack([ds.matrix, diff**2])
    m = fit_ols(make_dataset(X, ds.targets))
    assert m.coefficients[-1] == pytest.approx(q["weight"], abs=1e-3)
    assert np.abs(predict(m, X) - ds.targets).max() < 1e-6


def test_output_passes_ingest_invariants(tmp_path):
    cohort = generate_cohort(500, 5)
    paths = write_cohort(cohort, tmp_path)
    users = load_users(paths["users"])
    cands = load_users(paths["popular"])
    assert users.skipped == 0 and cands.skipped == 0
    assert len(users) == 500
    assert all(extract_age(u.description) == u.extracted_age for u in users)
    fixture = load_fixture(paths["kb"])
    client = FixtureAnnotationClient.from_kb_fixture(fixture)
    index = build_index(enrich_popular(cands.records, fixture, client))
    assert index == cohort.index
    assert len(cands) > len(index)  # some candidates do not link
    meta = cohort.metadata
    assert set(meta["seed_ids"]) <= {c.user_id for c in cands}


def test_friend_age_tracks_user_age():
    cohort = generate_cohort(2000, 6)
    ds, _ = _raw_dataset(cohort)
    col = ds.matrix[:, ds.column_index("mean_friends_age")]
    ok = ~np.isnan(col)
    assert np.corrcoef(col[ok], ds.targets[ok])[0, 1] > 0.3


@pytest.mark.parametrize(
    "params",
    [
        dict(n_types=4),
        dict(n_popular=100),
        dict(target_mean=5.0),
        dict(target_std=60.0),
        dict(age_min=5),
    ],
)
def test_infeasible_params_are_fatal(params):
    with pytest.raises(ValueError):
        generate_cohort(100, 0, GeneratorParams(**params))


def test_param_invariants():
    with pytest.raises(ValueError):
        GeneratorParams(age_min=50, age_max=40)
    with pytest.raises(ValueError):
        GeneratorParams(n_popular=0)
    with pytest.raises(ValueError):
        GeneratorParams(noise_std=-1)
    with pytest.raises(ValueError):
        GeneratorParams(nonlinearity="cubic")
    with pytest.raises(ValueError):
        GeneratorParams.from_json({"n_users": 3})
    with pytest.raises(ValueError):
        generate_cohort(9, 0)


def test_cohort_unpacks_to_triple():
    users, index, fixture = generate_cohort(50, 1)
    assert len(users) == 50 and index and fixture


@pytest.mark.slow
def test_quadratic_rbf_beats_linear_svr():
    cohort = generate_cohort(3000, 21, GeneratorParams(nonlinearity="quadratic"))
    ds, _ = _raw_dataset(cohort)
    train, test = split(ds, SplitPlan(0.33, 21))
    scores = {}
    for name, spec in (("rbf", ModelSpec.svr_rbf(10.0, 0.1)), ("linear", ModelSpec.svr_linear(10.0, 0.1))):
        m = train_with_preprocessing(train, spec)
        prepared = apply_preprocessing(test, m.preprocessing)
        scores[name] = mae(predict(m, prepared), prepared.targets)
    assert scores["rbf"] <= 0.95 * scores["linear"], scores
