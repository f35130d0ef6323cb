from .intake import intake_node
from .projection import projection_node
from .router import router_node
from .alignment import base_alignment_node, dynamic_alignment_node
from .fusion import fusion_node
from .output import output_node
