"""Build the baseline image and one variant per obscuration tactic, then run detection on each.

    python3 demos/obscuration_matrix.py

Every variant should be flagged with exactly its own tactic, and the package
inventory should not shrink, because packages are collected layer by layer.
"""

import os
import tempfile

from layerscope import synthetic
from layerscope.detector import render_table
from layerscope.imagebuilder import write_oci_layout
from layerscope.pipeline import analyze_image


def main():
    with tempfile.TemporaryDirectory() as tmp:
        baseline = None
        print(f"{'fixture':<10} {'findings':<22} {'packages':>8}  {'vs baseline'}")
        for tactic in (None,) + synthetic.TACTICS:
            name = tactic or "baseline"
            layout = write_oci_layout(synthetic.tactic_image(tactic), os.path.join(tmp, name))
            result = analyze_image(layout)
            keys = result.package_keys()
            baseline = keys if baseline is None else baseline
            labels = sorted({f.tactic.value for f in result.report.findings}) or ["-"]
            delta = f"+{len(keys - baseline)} -{len(baseline - keys)}"
            print(f"{name:<10} {','.join(labels):<22} {len(keys):>8}  {delta}")
            if tactic == "OSPKG":
                ospkg_table = render_table(result.report)
        print("\nDetail for the OSPKG variant:\n")
        print(ospkg_table)


if __name__ == "__main__":
    main()
