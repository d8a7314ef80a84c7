"""Cosine similarity of one client's pseudo-gradients across rounds.

Writes a per-layer heatmap CSV (rows: rounds, columns: anchor rounds) and
prints the adjacent-round vs distant-round means. With --plot and
matplotlib installed, also saves a PNG.

    python scripts/temporal_similarity.py --config configs/mlp_mixture.yaml --out results/similarity
"""
import argparse
from pathlib import Path

from gradestc.flsim import Simulation, build_model, load_config
from gradestc.metrics import adjacent_vs_distant, cosine_heatmap


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/mlp_mixture.yaml")
    ap.add_argument("--out", default="results/similarity")
    ap.add_argument("--rounds", type=int, default=40)
    ap.add_argument("--anchors", default="1,5,10,20,30")
    ap.add_argument("--client", type=int, default=0)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config).replace(rounds=args.rounds, codecs={})
    layers = [name for name in build_model(cfg.model).init_params() if name.endswith("weight")]
    sim = Simulation(cfg, trace_layers=layers, trace_window=args.rounds)
    sim.run()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    anchors = [int(a) for a in args.anchors.split(",")]
    heat = cosine_heatmap(sim.trace, anchors, client=args.client, layers=layers)
    heat.to_csv(out / "heatmap.csv")
    for layer in layers:
        adj, dist = adjacent_vs_distant(sim.trace, args.client, layer, 0, args.rounds - 1, 20)
        print(f"{layer}: adjacent {adj:.3f}  >=20 apart {dist:.3f}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, len(layers), figsize=(4 * len(layers), 5), squeeze=False)
        for ax, layer in zip(axes[0], layers):
            im = ax.imshow(heat.values[layer], aspect="auto", cmap="RdBu_r", vmin=-1, vmax=1)
            ax.set_title(layer)
            ax.set_xticks(range(len(anchors)), anchors)
            ax.set_xlabel("anchor round")
            ax.set_ylabel("round")
        fig.colorbar(im, ax=axes[0].tolist())
        fig.savefig(out / "heatmap.png", dpi=120)
    print(f"written to {out}")


if __name__ == "__main__":
    main()
