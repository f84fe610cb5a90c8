"""Summary statistics for the bundled ten-dataset accuracy table.

Shows ranks, mean per-class error, win counts against the baseline column
and pairwise Wilcoxon signed-rank p-values.
"""

from mlstmfcn import evalstats as es


def main():
    table = es.read_accuracy_csv(es.load_fixture("uci_accuracy.csv"))
    reference = es.read_reference_csv(es.load_fixture("uci_published.csv"))
    print(f"{len(table.datasets)} datasets, models: {', '.join(table.models)}\n")

    report = es.compare_report(table, reference=reference)
    print(report.to_tsv())

    print("\npairwise Wilcoxon p-values")
    for (a, b), p in report.pvalues.items():
        star = " *" if p < report.alpha else ""
        print(f"  {a:>12} vs {b:<12} {p:.4f}{star}")

    # Tabulated figures that the formulas do not reproduce are listed here.
    print("\nnotes")
    for note in report.notes:
        print(f"  {note}")

    # Restricting to the four proposed/prior models changes every rank.
    four = table.select(["LSTM-FCN", "MLSTM-FCN", "ALSTM-FCN", "MALSTM-FCN"])
    print("\nranks without the baseline column")
    for m, (arith, geom) in es.mean_ranks(four).items():
        print(f"  {m:<12} {arith:.2f}  (geometric {geom:.2f})")


if __name__ == "__main__":
    main()
