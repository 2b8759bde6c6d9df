"""
Counting convolution steps
==========================

Standard convolution against its depthwise-separable factorisation for a few
layer shapes. The separable form wins once the kernel count is large enough:
exactly when ``N * (Dk^2 - 1) > Dk^2``.
"""

from quadleaf.evalbench import ConvStepParams, conv_steps

shapes = [
    # (Di, M, Dk, N)
    (14, 3, 3, 1),
    (14, 3, 3, 2),
    (14, 3, 3, 64),
    (112, 32, 3, 64),
    (56, 128, 3, 128),
    (7, 1024, 1, 1024),
]

print(f"{'Di':>4} {'M':>5} {'Dk':>3} {'N':>5} {'standard':>14} {'separable':>14} {'ratio':>7}")
for di, m, dk, n in shapes:
    r = conv_steps(ConvStepParams(di=di, m=m, dk=dk, n=n))
    ratio = r["dwsc"] / r["traditional"]
    print(f"{di:>4} {m:>5} {dk:>3} {n:>5} {r['traditional']:>14,} {r['dwsc']:>14,} {ratio:>7.3f}")

