"""
Checking gradients
==================

Adapter gradients from the tape are compared with central differences of an
independent float64 forward pass.  Scaling one backward rule by 10% is
enough to fail the check.
"""

from textslider.gradcheck import corrupted, gradcheck_toy

for seed in range(3):
    report = gradcheck_toy(seed)
    print(f"seed {seed}: max relative error {report.max_error:.2e} at {report.worst}")

with corrupted("layernorm"):
    bad = gradcheck_toy(0)
print(f"broken layernorm rule: {bad.max_error:.3f}, passed={bad.passed()}")
