# Finite-horizon problem evaluation: rollout, cost, gradients
