"""Small public benchmark datasets shipped with the package.

Each entry maps a short name to its CSV file and the class modelled as the
target. ``breast_wisconsin`` had 16 missing ``bare_nuclei`` cells, filled
with the column median when the file was built.
"""

from importlib import resources

from ..data import binarize_majority, load_csv

BUNDLED = {
    "balance_scale": ("balance_scale.csv", "Left"),
    "iris": ("iris.csv", "Iris-virginica"),
    "haberman": ("haberman.csv", "Survived"),
    "breast_wisconsin": ("breast_wisconsin.csv", "Malignant"),
}


def path(name):
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return resources.files(__package__) / BUNDLED[name][0]


def load(name, standardize=False):
    """Load a bundled dataset already binarized against its target class."""
    with resources.as_file(path(name)) as p:
        ds = load_csv(p, "class", standardize=standardize)
    return binarize_majority(ds, BUNDLED[name][1])
