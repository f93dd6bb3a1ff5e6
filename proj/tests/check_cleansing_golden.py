"""Checks the cleansing golden table against the reference Python procedures."""
import json
import re
import sys


def number(pred):
    pred = pred.replace(",", "")
    found = [s for s in re.findall(r'-?\d+\.?\d*', pred)]
    if not found:
        return None
    # "1234." -> "1234": a sentence-final period is not part of the number.
    return found[0].rstrip(".")


def multiple_choice(pred):
    found = re.findall(r'A|B|C|D|E', pred)
    return found[0] if found else None


def first_of(pred, words):
    pred = pred.lower()
    pred = re.sub("\"|\'|\n|\.|\s|\:|\,", " ", pred)
    pred = pred.split(" ")
    # Compared case-insensitively; the input was lowercased above.
    found = [i for i in pred if i in words]
    return found[0] if found else None


def free_format(pred):
    return re.sub("\"|\'|\n|\.|\s", "", pred)


PROCEDURES = {
    "number": number,
    "multiple_choice": multiple_choice,
    "true_false": lambda p: first_of(p, ("true", "false")),
    "yes_no": lambda p: first_of(p, ("yes", "no")),
    "free_format": free_format,
}


def main(path):
    cases = json.load(open(path))
    failures = 0
    for case in cases:
        got = PROCEDURES[case["format"]](case["raw"])
        if got != case["expected"]:
            failures += 1
            print(f"MISMATCH {case!r}: reference gives {got!r}")
    print(f"{len(cases) - failures}/{len(cases)} golden cases agree with the reference procedures")
    return 1 if failures or len(cases) < 25 else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
