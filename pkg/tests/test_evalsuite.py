import numpy as np
import pytest
from scipy.linalg import hadamard

from viewforge.backends import StubEmbedBackend, StubVQABackend
from viewforge.evalsuite import (
    METRIC_NAMES,
    VERIFICATION_QUESTION_TEMPLATE,
    EvalReport,
    FeatureSet,
    append_aggregate,
    clip_similarity,
    evaluate_bundle,
    features_from_images,
    fid,
    fixture_row,
    frechet_to_point,
    gaussian_frechet,
    itc_score,
    load_fixtures,
    txt2txt_score,
    vqa_score,
    write_report,
)

from test_appearance import EDGE2IMAGE, make_structure
from viewforge.appearance import render_appearance


def random_features(rng, n=12, d=6, offset=0.0):
    return FeatureSet(vectors=rng.standard_normal((n, d)) + offset)


# ------------------------------------------------------------------------ fid


def test_fid_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    a = random_features(rng)
    same = FeatureSet(vectors=a.vectors.copy())
    assert fid(a, same) <= 1e-6


def test_fid_mirrored_set_is_zero():
    """Reflecting every vector about the mean keeps mean and covariance."""
    rng = np.random.default_rng(1)
    a = random_features(rng)
    mu = a.vectors.mean(axis=0)
    mirrored = FeatureSet(vectors=2.0 * mu - a.vectors)
    assert fid(a, mirrored) <= 1e-6


def test_fid_1d_closed_form():
    # means 0 and 1, both sample variances exactly 1 (ddof=1):
    # (0-1)^2 + 1 + 1 - 2*sqrt(1*1) = 1
    a = FeatureSet(vectors=np.array([[-1.0], [0.0], [1.0]]))
    b = FeatureSet(vectors=np.array([[0.0], [1.0], [2.0]]))
    assert fid(a, b) == pytest.approx(1.0, abs=1e-6)


def _diagonal_set(mu, scales):
    """16 samples whose sample mean is exactly mu and sample covariance is
    exactly diag(16 * scales^2 / 15), via zero-sum orthogonal Hadamard
    columns."""
    H = hadamard(16).astype(np.float64)
    D = H[:, 1:9] * np.asarray(scales, dtype=np.float64)[None, :]
    return FeatureSet(vectors=np.asarray(mu, dtype=np.float64)[None, :] + D)


def test_fid_diagonal_matches_per_axis_sum():
    rng = np.random.default_rng(7)
    mu_a = rng.standard_normal(8)
    mu_b = rng.standard_normal(8)
    s_a = rng.uniform(0.5, 2.0, size=8)
    s_b = rng.uniform(0.5, 2.0, size=8)
    a = _diagonal_set(mu_a, s_a)
    b = _diagonal_set(mu_b, s_b)

    var_a = 16.0 * s_a**2 / 15.0
    var_b = 16.0 * s_b**2 / 15.0
    expected = float(
        np.sum(
            (mu_a - mu_b) ** 2 + var_a + var_b - 2.0 * np.sqrt(var_a * var_b)
        )
    )
    assert fid(a, b) == pytest.approx(expected, abs=1e-6)


def test_fid_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = random_features(rng, n=10, d=5)
        b = random_features(rng, n=10, d=5, offset=rng.normal())
        assert abs(fid(a, b) - fid(b, a)) < 1e-8


def test_fid_rotation_invariant():
    rng = np.random.default_rng(4)
    a = random_features(rng, n=20, d=6)
    b = random_features(rng, n=20, d=6, offset=0.5)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    ra = FeatureSet(vectors=a.vectors @ q.T)
    rb = FeatureSet(vectors=b.vectors @ q.T)
    assert fid(ra, rb) == pytest.approx(fid(a, b), abs=1e-7)


def test_fid_nonnegative_and_increases_with_separation():
    rng = np.random.default_rng(5)
    a = random_features(rng, n=16, d=4)
    near = FeatureSet(vectors=a.vectors + 0.1)
    far = FeatureSet(vectors=a.vectors + 3.0)
    d_near, d_far = fid(a, near), fid(a, far)
    assert 0.0 <= d_near < d_far


def test_fid_input_validation():
    rng = np.random.default_rng(6)
    a = random_features(rng, n=5, d=3)
    with pytest.raises(ValueError):
        fid(a, random_features(rng, n=5, d=4))
    with pytest.raises(ValueError):
        fid(a, FeatureSet(vectors=rng.standard_normal((1, 3))))


def test_gaussian_frechet_commuting_exact():
    mu_a, mu_b = np.array([0.0, 0.0]), np.array([1.0, 2.0])
    cov_a = np.diag([1.0, 4.0])
    cov_b = np.diag([9.0, 1.0])
    # per-axis: (dmu^2 + sa^2 + sb^2 - 2 sa sb) = (1 + 1 + 9 - 6) + (4 + 4 + 1 - 4)
    assert gaussian_frechet(mu_a, cov_a, mu_b, cov_b) == pytest.approx(10.0)


def test_frechet_to_point_closed_form():
    a = FeatureSet(
        vectors=np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    )
    # mean (1, 1); per-axis sample variance 4/3; to the origin:
    # ||mu||^2 + Tr(cov) = 2 + 8/3
    assert frechet_to_point(a, np.zeros(2)) == pytest.approx(2.0 + 8.0 / 3.0)


def test_frechet_to_point_validation():
    a = FeatureSet(vectors=np.zeros((3, 2)))
    with pytest.raises(ValueError):
        frechet_to_point(a, np.zeros(3))
    with pytest.raises(ValueError):
        frechet_to_point(FeatureSet(vectors=np.zeros((1, 2))), np.zeros(2))


# ----------------------------------------------------------------- containers


def test_feature_set_validation():
    with pytest.raises(ValueError):
        FeatureSet(vectors=np.zeros(4))
    with pytest.raises(ValueError):
        FeatureSet(vectors=np.array([[1.0, np.inf]]))
    fs = FeatureSet(vectors=np.zeros((3, 7)))
    assert (fs.n, fs.dim) == (3, 7)
    assert fs.extractor_id == "embed-backend"


def test_features_from_images_extractor_id():
    embed = StubEmbedBackend()
    imgs = [np.zeros((8, 8, 3), dtype=np.uint8)]
    fs = features_from_images(imgs, embed)
    assert fs.extractor_id == "embed:StubEmbedBackend"
    assert fs.n == 1 and fs.dim == 256
    with pytest.raises(ValueError):
        features_from_images([], embed)


def test_eval_report_validation():
    ok = EvalReport(
        itc=0.3, clip_similarity=0.8, fid=120.0, vqa_score=0.9,
        n_views=16, method_label="ours",
    )
    assert EvalReport.from_dict(ok.to_dict()) == ok
    with pytest.raises(ValueError):
        EvalReport(itc=np.nan, clip_similarity=0.0, fid=0.0, vqa_score=0.0,
                   n_views=16, method_label="x")
    with pytest.raises(ValueError):
        EvalReport(itc=0.0, clip_similarity=0.0, fid=-0.1, vqa_score=0.0,
                   n_views=16, method_label="x")
    with pytest.raises(ValueError):
        EvalReport(itc=0.0, clip_similarity=1.5, fid=0.0, vqa_score=0.0,
                   n_views=16, method_label="x")


# -------------------------------------------------------------- image metrics


def test_clip_similarity_self_is_one():
    embed = StubEmbedBackend()
    img = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert clip_similarity([img], img, embed) == pytest.approx(1.0)


def test_clip_similarity_is_mean_over_views():
    embed = StubEmbedBackend()
    rng = np.random.default_rng(1)
    views = [rng.integers(0, 256, (16, 16, 3), dtype=np.uint8) for _ in range(3)]
    ref = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    ref_vec = embed.embed_image(ref)
    expected = np.mean(
        [embed.embed_image(v).cosine(ref_vec) for v in views]
    )
    assert clip_similarity(views, ref, embed) == pytest.approx(float(expected))


def test_itc_score_matches_manual_mean():
    embed = StubEmbedBackend()
    rng = np.random.default_rng(2)
    views = [rng.integers(0, 256, (16, 16, 3), dtype=np.uint8) for _ in range(4)]
    text_vec = embed.embed_text("a car")
    expected = np.mean([embed.embed_image(v).cosine(text_vec) for v in views])
    assert itc_score(views, "a car", embed) == pytest.approx(float(expected))
    with pytest.raises(ValueError):
        itc_score(views, "", embed)
    with pytest.raises(ValueError):
        itc_score([], "a car", embed)


def test_vqa_score_pinned_probability():
    vqa = StubVQABackend()
    vqa.set_yes_probability(0.5)
    views = [np.zeros((8, 8, 3), dtype=np.uint8)] * 4
    assert vqa_score(views, "a 2014 pickup", vqa) == 0.5
    vqa.set_yes_probability(1.0)
    assert vqa_score(views, "a 2014 pickup", vqa) == 1.0


def test_vqa_score_uses_question_template():
    class Spy(StubVQABackend):
        def __init__(self):
            super().__init__()
            self.questions = []

        def yes_probability(self, image, question):
            self.questions.append(question)
            return 0.5

    spy = Spy()
    views = [np.zeros((8, 8, 3), dtype=np.uint8)] * 2
    vqa_score(views, "a red coupe", spy)
    assert spy.questions == ["Does this image show a red coupe?"] * 2
    assert VERIFICATION_QUESTION_TEMPLATE == "Does this image show {prompt_text}?"


def test_txt2txt_score():
    embed = StubEmbedBackend()
    assert txt2txt_score("a silver sedan", "a silver sedan", embed) == \
        pytest.approx(1.0)
    cross = txt2txt_score("a silver sedan", "a dump truck", embed)
    assert cross == txt2txt_score("a dump truck", "a silver sedan", embed)
    with pytest.raises(ValueError):
        txt2txt_score("", "caption", embed)


# ------------------------------------------------------------------- fixtures


def test_fixture_row_lookup_and_errors():
    fixtures = load_fixtures()
    row = fixture_row(fixtures, "pascal3d", "ours")
    assert set(METRIC_NAMES) <= set(row)
    with pytest.raises(ValueError) as err:
        fixture_row(fixtures, "imaginary_table", "ours")
    assert "pascal3d" in str(err.value)
    with pytest.raises(ValueError) as err:
        fixture_row(fixtures, "pascal3d", "imaginary_method")
    assert "ours" in str(err.value)


def test_load_fixtures_from_explicit_path(tmp_path):
    path = tmp_path / "fixtures.json"
    path.write_text('{"t": {"metrics": ["itc"], "rows": {"m": {"itc": 0.5}}}}')
    fixtures = load_fixtures(path)
    assert fixture_row(fixtures, "t", "m") == {"itc": 0.5}


# ------------------------------------------------------------ evaluate_bundle


def _bundle():
    structure = make_structure()
    embed = StubEmbedBackend()
    return render_appearance(
        structure, embed.embed_text("subject"), structure.prompt, 17, EDGE2IMAGE
    )


def test_evaluate_bundle_single_reference():
    bundle = _bundle()
    ref = np.random.default_rng(9).integers(0, 256, (48, 48, 3), dtype=np.uint8)
    vqa = StubVQABackend()
    vqa.set_yes_probability(0.75)
    report = evaluate_bundle(bundle, ref, StubEmbedBackend(), vqa)
    assert report.n_views == 16
    assert report.method_label == "ours"
    assert report.vqa_score == 0.75
    assert report.fid >= 0.0
    assert -1.0 <= report.itc <= 1.0
    assert report.fixture_delta is None


def test_evaluate_bundle_multi_reference_uses_full_fid():
    bundle = _bundle()
    rng = np.random.default_rng(10)
    refs = [rng.integers(0, 256, (48, 48, 3), dtype=np.uint8) for _ in range(4)]
    embed = StubEmbedBackend()
    report = evaluate_bundle(bundle, refs, embed, StubVQABackend())
    expected_fid = fid(
        features_from_images(list(bundle.views), embed),
        features_from_images(refs, embed),
    )
    assert report.fid == pytest.approx(expected_fid)


def test_evaluate_bundle_fixture_deltas():
    bundle = _bundle()
    ref = np.random.default_rng(11).integers(0, 256, (48, 48, 3), dtype=np.uint8)
    fixtures = load_fixtures()
    report = evaluate_bundle(
        bundle, ref, StubEmbedBackend(), StubVQABackend(),
        fixtures=fixtures, fixture_table="pascal3d", fixture_method="ours",
    )
    row = fixture_row(fixtures, "pascal3d", "ours")
    assert set(report.fixture_delta) == set(row)
    for name in METRIC_NAMES:
        computed = getattr(report, name)
        assert report.fixture_delta[name] == pytest.approx(computed - row[name])


def test_evaluate_bundle_deterministic():
    bundle = _bundle()
    ref = np.random.default_rng(12).integers(0, 256, (48, 48, 3), dtype=np.uint8)
    r1 = evaluate_bundle(bundle, ref, StubEmbedBackend(), StubVQABackend())
    r2 = evaluate_bundle(bundle, ref, StubEmbedBackend(), StubVQABackend())
    assert r1 == r2


def test_evaluate_bundle_rejects_empty_reference_list():
    bundle = _bundle()
    with pytest.raises(ValueError):
        evaluate_bundle(bundle, [], StubEmbedBackend(), StubVQABackend())


# -------------------------------------------------------------------- outputs


def test_write_report_and_aggregate(tmp_path):
    report = EvalReport(
        itc=0.31, clip_similarity=0.82, fid=140.5, vqa_score=0.88,
        n_views=16, method_label="ours",
    )
    path = write_report(report, tmp_path)
    assert path.name == "report.json"
    again = EvalReport.from_dict(__import__("json").loads(path.read_text()))
    assert again == report

    csv_path = tmp_path / "reports.csv"
    append_aggregate(report, csv_path, "bundle-1")
    append_aggregate(report, csv_path, "bundle-2")
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "bundle,method_label,n_views,itc,clip_similarity,fid,vqa_score"
    assert len(lines) == 3
    assert lines[1].startswith("bundle-1,ours,16,0.31,")
    assert lines[2].startswith("bundle-2,")
