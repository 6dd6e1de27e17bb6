"""The fixed 10-organ schema used by the auxiliary organ head and the
phantom generator's pseudo-labels. Ordering is stable; label id = index + 1
(0 stays background)."""

ORGAN_SCHEMA = (
    "spleen",
    "kidneys",
    "liver",
    "urinary_bladder",
    "lung",
    "brain",
    "heart",
    "stomach",
    "prostate",
    "head_glands",
)

ORGAN_IDS = {name: i + 1 for i, name in enumerate(ORGAN_SCHEMA)}


def organ_label_schema() -> dict[int, str]:
    schema = {0: "background"}
    schema.update({i + 1: name for i, name in enumerate(ORGAN_SCHEMA)})
    return schema
