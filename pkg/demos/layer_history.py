"""Walk an image layer by layer and show where each package first appeared.

    python3 demos/layer_history.py

The image deletes the dpkg status database in its last layer. A scanner that
only looks at the final filesystem would miss the Debian packages entirely;
here they are kept and marked obscured.
"""

import os
import tempfile

from layerscope import synthetic
from layerscope.containerfile import render
from layerscope.imagebuilder import write_oci_layout
from layerscope.pipeline import analyze_image


def main():
    with tempfile.TemporaryDirectory() as tmp:
        layout = write_oci_layout(synthetic.tactic_image("OSPKG"), os.path.join(tmp, "ospkg"))
        result = analyze_image(layout)

    print("Reconstructed Containerfile:\n")
    print(render(result.instructions))
    for report in result.analysis.reports:
        print(f"layer {report.layer}: {report.package_count} packages visible  ({report.created_by or 'no history'})")
        for eco, name, version in report.new_packages:
            print(f"    + {eco}/{name} {version}")
    final = {p.key for p in result.analysis.final_packages}
    print(f"\nfinal filesystem alone: {len(final)} packages")
    print(f"layer-by-layer:         {len(result.packages)} packages")
    for pkg in result.packages:
        if pkg.obscured:
            print(f"    obscured: {pkg.ecosystem.value}/{pkg.name} {pkg.version} (from layer {pkg.source_layer})")


if __name__ == "__main__":
    main()
