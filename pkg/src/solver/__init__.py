# Real-time projected gradient solver
