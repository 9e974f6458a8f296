import sys


class UserInteraction:
    def __init__(self):
        super().__init__()


    @staticmethod
    def print_algebra(info):
        print(f"\n===== Algebra {info['label']} (rank {info['rank']}) =====")
        print("Cartan matrix:")
        for row in info["cartan"]:
            print("  " + " ".join(f"{entry:>3}" for entry in row))
        print(f"|rho|^2 = {info['weyl_norm_sq']}")
        constant, quadratic = info["central_charge_coefficients"]
        print(f"c_T = {constant} + {quadratic} q^2\n")


    @staticmethod
    def print_verdict(verdict):
        status = "PASS" if verdict["passed"] else "FAIL"
        print(f"\n===== Seiberg bounds: {status} =====")
        print("s = " + ", ".join(verdict["s"]))
        for failure in verdict["failures"]:
            print(f"  - {failure}")
        print("")


    @staticmethod
    def print_estimate(title, estimate):
        print(f"\n===== {title} =====")
        print(f"Value: {estimate['value']:.6g} +/- {estimate['stderr']:.2g}")
        print(f"Log value: {estimate['log_value']:.6f}")
        print(f"Replicas: {estimate['replicas']} (seed {estimate['seed']})\n")


    @staticmethod
    def print_comparison(title, z_score, passed):
        status = "PASS" if passed else "FAIL"
        print(f"\n===== {title}: {status} =====")
        print(f"Distance: {z_score:+.2f} sigma\n")


    @staticmethod
    def print_summary(summary):
        print("\n===== Total GMC mass by direction =====")
        print(summary.to_string(index=False))
        print("")


    @staticmethod
    def print_ledger(summary):
        failed = int(summary["failed"].sum())
        print(f"\n===== Oracle suite: {'PASS' if failed == 0 else 'FAIL'} =====")
        print(summary.to_string(index=False))
        print("")


    @staticmethod
    def print_error(category, message):
        print(f"toda-cft: {category}: {message}", file=sys.stderr)
