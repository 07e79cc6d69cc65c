# 共用工具函數
