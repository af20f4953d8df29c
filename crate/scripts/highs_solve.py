#!/usr/bin/env python3
"""Solve an LP file with HiGHS and write a `name value` solution file.

Usage: highs_solve.py MODEL.lp SOLUTION.sol [time_limit_seconds]

Intended as an external solver template:
    --solver 'external:python3 scripts/highs_solve.py {lp} {sol}'
"""
import sys

import highspy


def main():
    if len(sys.argv) not in (3, 4):
        sys.exit(__doc__)
    lp_path, sol_path = sys.argv[1], sys.argv[2]
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", 0.0)
    h.setOptionValue("mip_abs_gap", 0.0)
    if len(sys.argv) == 4:
        h.setOptionValue("time_limit", float(sys.argv[3]))
    h.readModel(lp_path)
    h.run()
    status = h.getModelStatus()
    names = h.getLp().col_names_
    values = h.getSolution().col_value
    with open(sol_path, "w") as out:
        if status == highspy.HighsModelStatus.kOptimal:
            out.write("# status: optimal\n")
        elif status == highspy.HighsModelStatus.kInfeasible:
            out.write("# status: infeasible\n")
            return
        elif status == highspy.HighsModelStatus.kTimeLimit and h.getInfo().primal_solution_status:
            out.write("# status: time_limit\n")
        else:
            sys.exit("highs: " + h.modelStatusToString(status))
        for name, value in zip(names, values):
            out.write(f"{name} {value!r}\n")


if __name__ == "__main__":
    main()
