"""Text labeling helpers."""


def label_total(items):
    total = sum(items)
    return "total: " + total
