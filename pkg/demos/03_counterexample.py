"""
A measure with no radial two-dimensional marginal
=================================================

Weights 2^-i on the basis vectors e_1..e_n. The heaviest atom alone holds
about half the mass, so the measure is far from decent, and every random
plane projection leaves a lopsided marginal.
"""
from radial_marginals.experiments import ExperimentConfig, bench_counterexample

cfg = ExperimentConfig("counterexample", n=20, d=2, seeds=tuple(range(10)), ref_size=5000)
rep = bench_counterexample(cfg)

print(f"alpha = {rep['alpha']:.10f}   closed form {rep['alpha_formula']:.10f}")
print("decent:", rep["decent"])
for seed, eps in zip(rep["seeds"], rep["epsilon_star"]):
    print(f"  seed {seed:>2}: epsilon_star {eps:.3f}")
print("all above 0.1:", rep["all_above_tenth"])
