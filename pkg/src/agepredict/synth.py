"""Synthetic cohorts with a planted, recoverable age signal.

Every user's age is drawn first (a rounded, clipped log-normal matched to the
target mean/std). The user's popular friends are then chosen so that the KB
type counts satisfy the planted function exactly:

    latent_age = age_min + sum_t weight_t * count_t  [+ q * (count_A - count_B)^2]

and the recorded age is ``latent_age + round(N(0, noise_std))`` (the latent age
is solved backwards from the recorded one, so the age distribution is exactly
the target). Friend choices are biased toward popular users of similar age,
which makes the mean/median friend-age columns informative as well.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize, stats

from .domain import AGE_MAX, AGE_MIN, DEFAULT_REFERENCE_DATE, PopularUser, UserRecord
from .featurize import build_index
from .ingest import (
    FixtureAnnotationClient,
    KbEntity,
    KbFixture,
    enrich_popular,
    expand_popular_users,
    write_fixture,
    write_users,
)

ONTOLOGY = "http://dbpedia.org/ontology/"
RESOURCE = "http://dbpedia.org/resource/"

_TYPE_NAMES = (
    "Person", "Athlete", "MusicalArtist", "Actor", "Politician", "Company", "Band",
    "TelevisionShow", "Comedian", "Writer", "SoccerPlayer", "Organisation", "Film",
    "Website", "BasketballPlayer", "OfficeHolder", "Scientist", "Magazine",
    "RadioStation", "VideoGame",
)
_FIRST = (
    "Ava", "Liam", "Mia", "Noah", "Zara", "Omar", "Lena", "Ivan", "Nora", "Eli",
    "Ruby", "Hugo", "Iris", "Jude", "Kira", "Leo", "Maya", "Nico", "Opal", "Remy",
    "Sade", "Theo", "Uma", "Vito", "Wren", "Xavi", "Yara", "Zeke", "Alba", "Bram",
    "Cleo", "Dax", "Edie", "Finn", "Gia", "Hank", "Ines", "Joss", "Kai", "Lola",
    "Milo", "Nell", "Otis", "Pia", "Quin", "Rosa", "Saul", "Tova", "Ugo", "Vera",
    "Wade", "Xena", "Yuri", "Zia", "Arlo", "Bea", "Cyd", "Dora", "Emil", "Fay",
)
_LAST = (
    "Lindqvist", "Okafor", "Marchetti", "Haddad", "Novak", "Castellanos", "Brennan",
    "Takahashi", "Osei", "Varga", "Delacroix", "Mbeki", "Petrov", "Quintero", "Sato",
    "Albrecht", "Byrne", "Cardenas", "Dimitriou", "Eklund", "Fontaine", "Gallo",
    "Horvath", "Ibarra", "Jansen", "Kowalski", "Larsen", "Moreau", "Nakamura",
    "Oyelaran", "Pereira", "Rasmussen", "Silva", "Tanaka", "Ueda", "Valdez",
    "Whitlock", "Yilmaz", "Zamora", "Abbott", "Bianchi", "Costa", "Duarte", "Engel",
    "Ferreira", "Grant", "Holm", "Ishida", "Jovanovic", "Keller", "Lund", "Mendes",
    "Nilsen", "Ortiz", "Pham", "Reyes", "Stone", "Torres", "Vance", "Wolff",
)
_HOBBIES = (
    "coffee lover", "runner", "student", "music fan", "gamer", "dog person",
    "amateur chef", "bookworm", "traveler", "film buff", "cyclist", "sneakerhead",
    "photographer", "gardener", "tea drinker", "podcast addict",
)
_AGE_TEMPLATES = ("{a} years old", "{a} y/o", "age: {a}", "{a} yrs old", "{a}yo", "{a} year old")

# Fixed structure of the planted function.
QUADRATIC_WEIGHT = 1
_SIGNAL_WEIGHTS = (2, 3)
_MEAN_INTEREST_FRIENDS = 5.0
_MEAN_NONPOPULAR_FRIENDS = 8.0
_AGE_AFFINITY_SCALE = 8.0
_N_SEEDS = 50


@dataclass(frozen=True)
class GeneratorParams:
    target_mean: float = 23.77
    target_std: float = 12.58
    age_min: float = AGE_MIN
    age_max: float = AGE_MAX
    n_popular: int = 600
    n_types: int = 12
    noise_std: float = 3.0
    nonlinearity: str = "none"  # "none" | "quadratic"

    def __post_init__(self):
        if not self.age_min < self.age_max:
            raise ValueError("age_min must be < age_max")
        if self.n_popular < 1 or self.n_types < 1:
            raise ValueError("n_popular and n_types must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.nonlinearity not in ("none", "quadratic"):
            raise ValueError(f"nonlinearity must be 'none' or 'quadratic', got {self.nonlinearity!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown generator parameter(s): {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Cohort:
    users: list
    index: dict
    fixture: KbFixture
    candidates: list
    popular: list
    metadata: dict = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (users, index, fixture)
        return iter((self.users, self.index, self.fixture))


# --- age distribution -----------------------------------------------------


def _integer_age_pmf(mu: float, sigma: float, lo: int, hi: int) -> np.ndarray:
    """P(round(clip(X, lo, hi)) = k) for X ~ LogNormal(mu, sigma), k = lo..hi."""
    dist = stats.lognorm(s=sigma, scale=math.exp(mu))
    edges = np.arange(lo, hi + 1) + 0.5
    cdf = dist.cdf(edges[:-1])
    pmf = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    return np.clip(pmf, 0.0, None)


def _pmf_moments(pmf: np.ndarray, lo: int) -> tuple[float, float]:
    ages = np.arange(lo, lo + len(pmf))
    mean = float(pmf @ ages)
    return mean, float(math.sqrt(max(pmf @ (ages - mean) ** 2, 0.0)))


def solve_age_distribution(params: GeneratorParams) -> tuple[float, float, np.ndarray]:
    """Log-normal (mu, sigma) whose rounded, clipped version has the target mean and std."""
    lo, hi = int(math.ceil(params.age_min)), int(math.floor(params.age_max))
    if lo < AGE_MIN or hi > AGE_MAX or lo >= hi:
        raise ValueError(f"age range [{params.age_min}, {params.age_max}] must sit inside [{AGE_MIN}, {AGE_MAX}]")
    m, s = params.target_mean, params.target_std
    if not lo < m < hi or s <= 0:
        raise ValueError(f"target mean {m} must lie strictly inside [{lo}, {hi}] and std {s} must be > 0")

    def residual(z):
        # the search can wander into extreme scales while proving infeasibility
        with np.errstate(all="ignore"):
            mean, std = _pmf_moments(_integer_age_pmf(z[0], math.exp(z[1]), lo, hi), lo)
        return [mean - m, std - s]

    sigma0 = math.sqrt(math.log1p((s / m) ** 2))
    start = [math.log(m) - sigma0**2 / 2, math.log(sigma0)]
    sol = optimize.least_squares(residual, start, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    if max(abs(v) for v in sol.fun) > 1e-6:
        raise ValueError(
            f"no clipped log-normal on [{lo}, {hi}] reaches mean {m} and std {s} "
            f"(closest: off by {sol.fun[0]:.3g} / {sol.fun[1]:.3g})"
        )
    mu, sigma = float(sol.x[0]), float(math.exp(sol.x[1]))
    return mu, sigma, _integer_age_pmf(mu, sigma, lo, hi)


# --- popular-user pool ----------------------------------------------------


def _type_uris(n_types: int) -> list[str]:
    names = list(_TYPE_NAMES[:n_types])
    names += [f"SynthType{i:03d}" for i in range(len(names), n_types)]
    return [ONTOLOGY + n for n in names]


def _weighted_order(rng, weights: np.ndarray) -> np.ndarray:
    """Random order drawn without replacement, proportional to ``weights``."""
    keys = rng.exponential(size=len(weights)) / weights
    return np.argsort(keys, kind="stable")


def _affinity(ages: np.ndarray, target: float) -> np.ndarray:
    w = np.exp(-np.abs(ages - target) / _AGE_AFFINITY_SCALE)
    return np.where(np.isnan(ages), math.exp(-2.0), w)


def generate_cohort(
    n: int,
    seed: int,
    params: Optional[GeneratorParams] = None,
    reference_date: dt.date = DEFAULT_REFERENCE_DATE,
) -> Cohort:
    if params is None:
        params = GeneratorParams()
    if n < 10:
        raise ValueError(f"n must be >= 10, got {n}")
    lo, hi = int(math.ceil(params.age_min)), int(math.floor(params.age_max))
    span = hi - lo
    quad_max = int(math.isqrt(span // QUADRATIC_WEIGHT))
    n_pair = quad_max + 3  # users per quadratic type
    n_filler = span + 1
    if params.n_types < 5:
        raise ValueError("n_types must be >= 5: filler, two quadratic, one signal and one interest type")
    min_pool = n_filler + 2 * n_pair + 20
    if params.n_popular < min_pool:
        raise ValueError(
            f"n_popular={params.n_popular} too small; the planted signal needs {n_filler} filler "
            f"users, {2 * n_pair} quadratic-type users and some others (at least {min_pool})"
        )
    if params.n_popular > len(_FIRST) * len(_LAST):
        raise ValueError(f"n_popular must be <= {len(_FIRST) * len(_LAST)} (distinct entity names)")

    mu, sigma, pmf = solve_age_distribution(params)
    rng = np.random.default_rng(seed)

    # type roles
    types = _type_uris(params.n_types)
    filler_t, qa_t, qb_t = types[0], types[1], types[2]
    n_signal_types = max(1, (params.n_types - 3) // 3)
    signal_ts = types[3 : 3 + n_signal_types]
    interest_ts = types[3 + n_signal_types :]
    weights = {t: 0 for t in types}
    weights[filler_t] = 1
    for i, t in enumerate(signal_ts):
        weights[t] = _SIGNAL_WEIGHTS[i % len(_SIGNAL_WEIGHTS)]

    # pool members: (role, types)
    P = params.n_popular
    n_signal_users = max(10, (P - n_filler - 2 * n_pair) // 3)
    n_interest_users = P - n_filler - 2 * n_pair - n_signal_users
    roles = (
        ["filler"] * n_filler
        + ["qa"] * n_pair
        + ["qb"] * n_pair
        + ["signal"] * n_signal_users
        + ["interest"] * n_interest_users
    )
    name_idx = rng.choice(len(_FIRST) * len(_LAST), size=P, replace=False)
    pool_ids = [f"p{i:05d}" for i in range(P)]
    pool_names = [f"{_FIRST[k // len(_LAST)]} {_LAST[k % len(_LAST)]}" for k in name_idx]
    pool_types = []
    for role in roles:
        if role == "filler":
            ts = {filler_t}
        elif role == "qa":
            ts = {qa_t}
        elif role == "qb":
            ts = {qb_t}
        elif role == "signal":
            ts = {signal_ts[rng.integers(len(signal_ts))]}
            if rng.random() < 0.5:
                ts.add(interest_ts[rng.integers(len(interest_ts))])
        else:
            k = 1 + int(rng.random() < 0.4)
            ts = set(rng.choice(interest_ts, size=min(k, len(interest_ts)), replace=False).tolist())
        pool_types.append(frozenset(ts))
    has_birth = rng.random(P) < 0.8
    pool_age = np.clip(np.round(rng.normal(36.0, 13.0, P)), 16, 85)
    pool_age = np.where(has_birth, pool_age, np.nan)
    pool_followers = np.round(np.exp(rng.normal(13.0, 1.3, P))).astype(int)
    role_arr = np.array(roles)
    contrib = np.array([sum(weights[t] for t in ts) for ts in pool_types])

    fixture = KbFixture()
    for i in range(P):
        birth = None
        if has_birth[i]:
            birth = dt.date(reference_date.year - int(pool_age[i]) - 1, 1, 1) + dt.timedelta(
                days=int(rng.integers(0, 365))
            )
        fixture[RESOURCE + pool_names[i].replace(" ", "_")] = KbEntity(pool_types[i], birth)

    # candidate profiles: 50 seeds whose friend lists reach every other candidate
    n_unlinked = max(5, P // 10)
    unlinked_ids = [f"q{i:05d}" for i in range(n_unlinked)]
    profiles = {}
    for i in range(P):
        profiles[pool_ids[i]] = UserRecord(
            user_id=pool_ids[i],
            screen_name=pool_names[i].replace(" ", "").lower(),
            name=pool_names[i],
            description="Official account",
            followers_count=int(pool_followers[i]),
            friends_count=int(rng.integers(50, 2000)),
        )
    for j, uid in enumerate(unlinked_ids):
        mention = pool_names[int(rng.integers(P))]
        profiles[uid] = UserRecord(
            user_id=uid,
            screen_name=f"fanpage{j}",
            name=f"daily fan page {j}",
            description=f"updates about {mention}",
            followers_count=int(rng.integers(1000, 200000)),
            friends_count=int(rng.integers(10, 500)),
        )
    n_seed = min(_N_SEEDS, P // 4)
    seed_ids = pool_ids[:n_seed]
    others = pool_ids[n_seed:] + unlinked_ids
    seed_friends = {s: [] for s in seed_ids}
    for k, uid in enumerate(others):
        seed_friends[seed_ids[k % n_seed]].append(uid)
        if rng.random() < 0.3:
            seed_friends[seed_ids[int(rng.integers(n_seed))]].append(uid)
    for s in seed_ids:
        base = profiles[s]
        profiles[s] = UserRecord(
            **{**asdict(base), "friend_ids": tuple(sorted(set(seed_friends[s])))}
        )
    seed_popular = [PopularUser(user_id=s) for s in seed_ids]
    expanded = expand_popular_users(
        seed_popular,
        friend_lookup=lambda uid: profiles[uid].friend_ids,
        profile_lookup=lambda uid: profiles[uid],
        max_workers=1,
    )
    candidates = sorted([profiles[s] for s in seed_ids] + expanded, key=lambda u: u.user_id)

    client = FixtureAnnotationClient.from_kb_fixture(fixture)
    popular = enrich_popular(candidates, fixture, client, reference_date)
    index = build_index(popular)

    # users
    age_values = np.arange(lo, hi + 1)
    ages = rng.choice(age_values, size=n, p=pmf / pmf.sum())
    noise = np.round(rng.normal(0.0, params.noise_std, n)).astype(int) if params.noise_std > 0 else np.zeros(n, int)
    latent = np.clip(ages - noise, lo, hi)

    by_role = {r: np.flatnonzero(role_arr == r) for r in ("filler", "qa", "qb", "signal", "interest")}
    users = []
    for u in range(n):
        target = int(latent[u])
        budget = target - lo
        chosen = []

        r_common = int(rng.integers(0, 4))
        if params.nonlinearity == "quadratic":
            dmax = int(math.isqrt(budget // QUADRATIC_WEIGHT))
        else:
            dmax = min(quad_max, 3)
        d = int(rng.integers(-dmax, dmax + 1))
        if params.nonlinearity == "quadratic":
            budget -= QUADRATIC_WEIGHT * d * d
        for role, count in (("qa", r_common + max(d, 0)), ("qb", r_common + max(-d, 0))):
            members = by_role[role]
            order = _weighted_order(rng, _affinity(pool_age[members], target))
            chosen.extend(members[order[:count]].tolist())

        sig = by_role["signal"]
        sig_budget = int(math.floor(rng.uniform(0.2, 0.8) * budget))
        order = sig[_weighted_order(rng, _affinity(pool_age[sig], target))]
        spent = 0
        for p in order:
            if spent + contrib[p] <= sig_budget:
                chosen.append(int(p))
                spent += contrib[p]
            if sig_budget - spent < min(_SIGNAL_WEIGHTS):
                break
        fill = by_role["filler"]
        order = fill[_weighted_order(rng, _affinity(pool_age[fill], target))]
        chosen.extend(order[: budget - spent].tolist())

        inter = by_role["interest"]
        k = min(int(rng.poisson(_MEAN_INTEREST_FRIENDS)), len(inter))
        order = inter[_weighted_order(rng, _affinity(pool_age[inter], target))]
        chosen.extend(order[:k].tolist())

        friend_ids = [pool_ids[p] for p in chosen]
        if rng.random() < 0.1:
            friend_ids.append(unlinked_ids[int(rng.integers(n_unlinked))])
        n_other = int(rng.poisson(_MEAN_NONPOPULAR_FRIENDS))
        friend_ids.extend(f"n{u:06d}_{j}" for j in range(n_other))
        friend_ids = [friend_ids[i] for i in rng.permutation(len(friend_ids))]

        age = int(ages[u])
        template = _AGE_TEMPLATES[int(rng.integers(len(_AGE_TEMPLATES)))]
        hobbies = rng.choice(len(_HOBBIES), size=2, replace=False)
        description = f"{_HOBBIES[hobbies[0]]}, {template.format(a=age)}, {_HOBBIES[hobbies[1]]}"
        users.append(
            UserRecord(
                user_id=f"u{u:06d}",
                screen_name=f"user{u:06d}",
                name=f"User {u}",
                description=description,
                followers_count=int(np.round(np.exp(rng.normal(5.0, 1.5)))),
                friends_count=len(friend_ids) + int(rng.integers(0, 400)),
                friend_ids=tuple(friend_ids),
                extracted_age=age,
            )
        )

    metadata = {
        "n": n,
        "seed": seed,
        "params": asdict(params),
        "reference_date": reference_date.isoformat(),
        "age_distribution": {"family": "lognormal, rounded and clipped", "mu": mu, "sigma": sigma},
        "planted_function": {
            "intercept": lo,
            "type_weights": {t: w for t, w in sorted(weights.items()) if w},
            "quadratic": (
                {"type_a": qa_t, "type_b": qb_t, "weight": QUADRATIC_WEIGHT}
                if params.nonlinearity == "quadratic"
                else None
            ),
            "form": "latent_age = intercept + sum_t w_t * count_t"
            + (" + weight * (count_a - count_b)^2" if params.nonlinearity == "quadratic" else ""),
            "recorded_age": "latent_age + round(N(0, noise_std))",
        },
        "type_roles": {
            "filler": filler_t,
            "quadratic": [qa_t, qb_t],
            "signal": list(signal_ts),
            "interest": list(interest_ts),
        },
        "n_candidates": len(candidates),
        "n_popular_linked": len(index),
        "seed_ids": list(seed_ids),
    }
    return Cohort(users, index, fixture, candidates, popular, metadata)


def write_cohort(cohort: Cohort, out_dir) -> dict[str, Path]:
    """users.jsonl, popular.jsonl (candidate profiles), kb_fixture.json, generator_meta.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "users": out_dir / "users.jsonl",
        "popular": out_dir / "popular.jsonl",
        "kb": out_dir / "kb_fixture.json",
        "meta": out_dir / "generator_meta.json",
    }
    write_users(cohort.users, paths["users"])
    write_users(cohort.candidates, paths["popular"])
    write_fixture(cohort.fixture, paths["kb"])
    paths["meta"].write_text(json.dumps(cohort.metadata, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths
