# HVS ISP
# Controllable quad-Bayer ISP with event-stream analytics
