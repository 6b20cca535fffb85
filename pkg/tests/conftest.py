import pytest

from hiergi.hierarchy import default_hierarchy, load_hierarchy


@pytest.fixture(scope="session")
def hierarchy():
    return default_hierarchy()


TOY_DOC = {
    "tracts": ["lower", "upper"],
    "categories": ["landmark", "pathology"],
    "findings": [
        {"name": "A", "tract": "lower", "category": "landmark"},
        {"name": "B", "tract": "lower", "category": "landmark"},
        {"name": "C", "tract": "upper", "category": "pathology"},
    ],
}


@pytest.fixture(scope="session")
def toy_hierarchy():
    return load_hierarchy(TOY_DOC)
