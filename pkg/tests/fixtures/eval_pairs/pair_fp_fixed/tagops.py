"""Tag merging helpers."""


def merge_tags(tags, extra):
    tags = list(tags) + list(extra)
    return sorted(tags)
