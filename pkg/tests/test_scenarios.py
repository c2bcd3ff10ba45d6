import pytest

from polypnet.dataset import DatasetManifest, ManifestEntry
from polypnet.errors import ConfigError, DatasetError
from polypnet.scenarios import (
    CROSS_DATASET,
    CROSS_VALIDATION,
    MERGED,
    SampleRef,
    get_scenario,
    make_folds,
    read_id_list,
    resolve,
    scenario_split,
    write_folds,
)


def manifest(source, count):
    return DatasetManifest(source, [ManifestEntry(f"{source}_{i:04d}", "", "") for i in range(count)])


@pytest.fixture
def manifests():
    return {
        "cvc-clinicdb": manifest("cvc-clinicdb", 612),
        "cvc-colondb": manifest("cvc-colondb", 380),
        "etis-larib": manifest("etis-larib", 196),
        "kvasir-seg": manifest("kvasir-seg", 1000),
    }


def disjoint(split):
    sets = [set(split.train), set(split.validation), set(split.test)]
    return not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])


def test_fold_sizes_and_coverage():
    folds = make_folds(612, 5, seed=0)
    assert sorted(len(f) for f in folds) == [122, 122, 122, 123, 123]
    assert sorted(i for f in folds for i in f) == list(range(612))
    assert all(f == sorted(f) for f in folds)


def test_folds_are_seed_stable():
    assert make_folds(100, 5, seed=3) == make_folds(100, 5, seed=3)
    assert make_folds(100, 5, seed=3) != make_folds(100, 5, seed=4)


def test_fold_errors():
    with pytest.raises(ConfigError):
        make_folds(10, 1)
    with pytest.raises(DatasetError):
        make_folds(3, 5)


def test_merged_scenario_sizes(manifests):
    split = scenario_split(get_scenario(4), manifests)
    assert split.sizes() == (1290, 161, 161)
    assert disjoint(split)
    assert set(split.test_by_source()) <= {"kvasir-seg", "cvc-clinicdb"}


@pytest.mark.parametrize("scenario_id,train,test", [
    (1, ("cvc-colondb", "etis-larib"), 612),
    (2, ("cvc-colondb",), 612),
    (3, ("cvc-clinicdb",), 196),
])
def test_cross_dataset_scenarios(manifests, scenario_id, train, test):
    spec = get_scenario(scenario_id)
    assert spec.protocol == CROSS_DATASET
    split = scenario_split(spec, manifests)
    pool = sum(len(manifests[name]) for name in train)
    assert len(split.test) == test
    assert len(split.train) + len(split.validation) == pool
    assert len(split.validation) == pool // 10
    assert {r.source for r in split.train} == set(train)
    assert disjoint(split)


@pytest.mark.parametrize("fold", range(5))
def test_cross_validation_scenario(manifests, fold):
    spec = get_scenario(5, fold=fold)
    assert spec.protocol == CROSS_VALIDATION
    split = scenario_split(spec, manifests)
    assert len(split.test) in (122, 123)
    assert sum(split.sizes()) == 612
    assert disjoint(split)


def test_cross_validation_test_folds_cover_source(manifests):
    tested = set()
    for fold in range(5):
        tested |= set(scenario_split(get_scenario(6, fold=fold), manifests).test)
    assert len(tested) == 1000


def test_split_is_seed_stable(manifests):
    a = scenario_split(get_scenario(4, seed=7), manifests)
    b = scenario_split(get_scenario(4, seed=7), manifests)
    c = scenario_split(get_scenario(4, seed=8), manifests)
    assert a.test == b.test and a.train == b.train
    assert a.test != c.test


def test_scenario_zero():
    merged = get_scenario(0, ["synthetic"])
    assert merged.protocol == MERGED and merged.train_sources == ("synthetic",)
    cv = get_scenario(0, ["synthetic"], fold=2, cross_validation=True)
    assert cv.protocol == CROSS_VALIDATION and cv.fold == 2


def test_scenario_zero_cross_validation_split():
    split = scenario_split(get_scenario(0, ["toy"], fold=1, cross_validation=True), {"toy": manifest("toy", 50)})
    assert len(split.test) == 10
    assert sum(split.sizes()) == 50


def test_scenario_errors(manifests):
    with pytest.raises(ConfigError):
        get_scenario(7)
    with pytest.raises(ConfigError):
        get_scenario(0)
    with pytest.raises(ConfigError):
        get_scenario(0, ["a", "b"], cross_validation=True)
    with pytest.raises(ConfigError):
        get_scenario(4, cross_validation=True)
    with pytest.raises(ConfigError):
        get_scenario(5, fold=5)
    with pytest.raises(DatasetError):
        scenario_split(get_scenario(1), {"cvc-colondb": manifests["cvc-colondb"]})


def test_fold_files_round_trip(tmp_path):
    ids = [f"id{i}" for i in range(7)]
    folds = make_folds(7, 3, seed=1)
    paths = write_folds(str(tmp_path), ids, folds)
    assert [p.split("/")[-1] for p in paths] == ["fold_0", "fold_1", "fold_2"]
    assert read_id_list(paths[0]) == [ids[i] for i in folds[0]]


def test_resolve():
    samples = {"toy": {"a": 1, "b": 2}}
    refs = [SampleRef("toy", "b"), SampleRef("toy", "a")]
    assert resolve(refs, samples) == [2, 1]
    with pytest.raises(DatasetError):
        resolve([SampleRef("toy", "c")], samples)


def test_fold_count_is_configurable(manifests):
    spec = get_scenario(5, fold=2, folds=3)
    assert spec.folds == 3
    split = scenario_split(spec, manifests)
    assert len(split.test) == 204
    assert get_scenario(4, folds=3).folds == 5
    with pytest.raises(ConfigError):
        get_scenario(5, fold=3, folds=3)
