# oracle_check.py
# 닫힌 형태 기준값 출력 (Monte Carlo 없음)
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from fkheat.kernels_quadrature import expected_S, sigma_t  # noqa: E402
from fkheat.model import HurstSpec, Regime, validate  # noqa: E402
from fkheat.run_records import format_float  # noqa: E402
from fkheat.special_d1 import d1_spec, silt_limit, silt_limit_by_quadrature  # noqa: E402

SPECS = {
    "A": HurstSpec(1, 0.7, (0.9,), Regime.REGULAR),
    "B": HurstSpec(2, 0.9, (0.8, 0.8), Regime.REGULAR),
}


def main():
    for label, spec in SPECS.items():
        report = validate(spec)
        print(f"[spec {label}] d={spec.d} h0={spec.h0} h={spec.h}")
        print(f"  kappa     = {format_float(report.kappa)}")
        print(f"  alpha_h   = {format_float(report.alpha_h)}")
        print(f"  E S(B;1)  = {format_float(expected_S(spec, 1.0))}")
        print(f"  Sigma_1   = {format_float(sigma_t(spec, 1.0))}")

    for h0 in (0.8, 0.9):
        spec = d1_spec(h0)
        closed = spec.alpha_h0 * silt_limit(h0, 1.0)
        quad = spec.alpha_h0 * silt_limit_by_quadrature(h0, 1.0)
        print(f"[special d=1] h0={h0}")
        print(f"  E Var V (closed form) = {format_float(closed)}")
        print(f"  E Var V (quadrature)  = {format_float(quad)}")
        print(f"  relative gap          = {abs(closed - quad) / closed:.3e}")


if __name__ == "__main__":
    main()
