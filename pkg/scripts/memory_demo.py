"""Optimal-control storage and retrieval in the one-mode model for several cooperativities."""
import argparse

from arrayqi.memory import exponential_pulse, optimal_storage_control, simulate_retrieval, simulate_storage, time_reverse_control
from arrayqi.model1d import InterfaceParams

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rate", type=float, default=0.004, help="pulse rate in units of the total decay rate")
    args = ap.parse_args()
    print("C,bound,e_s,e_r")
    for C in (1, 3, 10, 100):
        p = InterfaceParams(1.0, 1.0 / C)
        A = p.total_rate
        h = exponential_pulse(args.rate * A, step=0.5 / A)
        ctrl = optimal_storage_control(h, p, 0.0)
        run = simulate_storage(h, ctrl, p, 0.0)
        e_r = simulate_retrieval(run.S[-1], time_reverse_control(ctrl), p, 0.0).efficiency
        print(f"{C},{C / (1 + C):.6f},{run.efficiency:.6f},{e_r:.6f}")
