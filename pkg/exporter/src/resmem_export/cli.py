"""resmem-export command line: model + data in, RMEM v1 file out.

--model is a torch.save'd nn.Module (pickled module, not a state dict).
--data is a torch.save'd {"inputs": Tensor, "labels": Tensor} dict or an
(inputs, labels) tuple/list.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import torch

from resmem_export.export import ExportSpec, LayerNotFound, ShapeDrift, export, pair_iterator


def _load_data(path: str):
    blob = torch.load(path, weights_only=False)
    if isinstance(blob, dict):
        return blob["inputs"], blob["labels"]
    if isinstance(blob, (tuple, list)) and len(blob) == 2:
        return blob[0], blob[1]
    raise ValueError(f"{path}: expected a dict with inputs/labels or a 2-tuple")


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="resmem-export", description=__doc__)
    parser.add_argument("--model", required=True, help="torch.save'd nn.Module")
    parser.add_argument("--layer", required=True, help="submodule path whose output is the embedding")
    parser.add_argument("--data", required=True, help="torch.save'd inputs/labels")
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    try:
        model = torch.load(args.model, weights_only=False)
        if not isinstance(model, torch.nn.Module):
            raise ValueError(f"{args.model}: not a torch module")
        inputs, labels = _load_data(args.data)
        spec = ExportSpec(model=model, layer=args.layer,
                          batch_size=args.batch, out=args.out)
        export(spec, pair_iterator(torch.as_tensor(inputs), torch.as_tensor(labels)))
    except (LayerNotFound, ShapeDrift, ValueError, OSError) as exc:
        print(f"resmem-export: error: {exc}", file=sys.stderr)
        return 2
    print(f"written out={args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
