"""How far does a quantized-data predictor drift from the unquantized one?

Trains a lifted predictor of the pendulum on dither-quantized states and
inputs for several word lengths and fits the decay of the relative error of
``A`` against ``b``.  Each extra bit halves the quantization step, so on a
log10 scale the error should fall by a roughly constant amount per bit.

    python demos/pendulum_error_sweep.py [--paper-scale] [--out DIR]
"""

import argparse
import os

from koopquant.harness import ExperimentConfig, emit_outputs, load_config, run_sweep

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--paper-scale", action="store_true", help="200 trajectories x 1000 steps x 50 seeds")
    ap.add_argument("--out", default="results/pendulum_desk")
    args = ap.parse_args()

    cfg = load_config(os.path.join(HERE, "configs", "pendulum_desk.yaml"))
    if args.paper_scale:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "paper_scale": True})
    result = run_sweep(cfg)

    print(f"{'b':>3} {'relA mean':>12} {'relB mean':>12} {'pred. error':>12}")
    for row in result.aggregate():
        print(f"{row['b']:>3} {row['relA_mean']:12.4e} {row['relB_mean']:12.4e} {row['prediction_error_mean']:12.4e}")
    print(f"unquantized prediction error {result.reference['prediction_error']:.4e}")
    for k, fit in result.slopes().items():
        print(f"{k}: slope {fit['slope']:+.3f} per bit (r2 {fit['r2']:.3f}); halving per bit is -0.301")

    paths = emit_outputs(result, args.out, svg=True)
    print("wrote", ", ".join(sorted(paths.values())))


if __name__ == "__main__":
    main()
