# 角色動態分析核心模組
