import json, os, sys, time
import numpy as np
from icex import simbench as sb

cfg = sb.ExperimentConfig(trials=200, seed=0, jobs=1)
rows = []
sirs = {}
t_all = time.time()
for bg in cfg.backgrounds:
    for alg in cfg.algorithms:
        for eps in cfg.epsilon_sq:
            c0 = os.times()
            t0 = time.time()
            res = sb.run_cell(cfg, alg, bg, eps)
            c1 = os.times()
            cell_cpu = (c1.user + c1.system) - (c0.user + c0.system)
            sir = np.asarray(res.sir, dtype=float)
            it = np.asarray(res.iters, dtype=float)
            row = dict(alg=alg, bg=bg, eps=eps,
                       succ=float(np.mean(sir > 0.0)),
                       sir_mean=float(np.mean(sir)),
                       sir_median=float(np.median(sir)),
                       iters=float(np.mean(it)),
                       conv=float(np.mean(res.converged)),
                       cpu=cell_cpu, wall=time.time() - t0)
            rows.append(row)
            sirs[f"{alg}|{bg}|{eps!r}"] = sir
            print(f"{bg[9:]:8s} {alg:13s} eps={eps:<7g} succ={row['succ']:.3f} "
                  f"med={row['sir_median']:7.1f} it={row['iters']:6.0f} "
                  f"cpu={cell_cpu:6.1f}s", flush=True)
            with open("/root/pkg/.bench/fullgrid_rows.json", "w") as f:
                json.dump(rows, f, indent=1)
np.savez_compressed("/root/pkg/.bench/fullgrid_sirs.npz", **sirs)
print(f"TOTAL wall {time.time()-t_all:.0f}s", flush=True)
