# Two-drug pharmacokinetic/pharmacodynamic anesthesia model
