# Closed-loop simulation, estimation and clinical metrics
