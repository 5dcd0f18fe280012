"""Recounts word shares in a corpus.txt written by `gcav make-corpus`.

Each line is one sequence: a marker (<A> or <B>) then words named a.., b..
or s... Prints the A-word share inside <A> sequences and exits non-zero
when it falls outside 0.85 +- 0.03 or a sequence breaks the layout.
"""
import sys


def main(path):
    a_words = total = 0
    sequences = 0
    with open(path) as f:
        for line in f:
            tokens = line.split()
            if not tokens:
                continue
            sequences += 1
            marker = tokens[0]
            if marker not in ("<A>", "<B>"):
                sys.exit(f"line {sequences}: bad marker {marker}")
            own = "a" if marker == "<A>" else "b"
            for t in tokens[1:]:
                if t[0] not in (own, "s"):
                    sys.exit(f"line {sequences}: {t} does not belong after {marker}")
            if own == "a":
                total += len(tokens) - 1
                a_words += sum(t[0] == "a" for t in tokens[1:])
    share = a_words / total
    print(f"{sequences} sequences, A-word share in <A> sequences {share:.4f}")
    if abs(share - 0.85) > 0.03:
        sys.exit(1)


if __name__ == "__main__":
    main(sys.argv[1])
