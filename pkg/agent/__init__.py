# Access-point side of the distributed simulator
